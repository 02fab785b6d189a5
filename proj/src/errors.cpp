#include "goi/errors.hpp"

namespace goi {

FormatError::FormatError(Kind kind, const std::string& what)
    : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

const char* to_string(FormatError::Kind kind) noexcept {
    switch (kind) {
    case FormatError::Kind::WrongMagic:
        return "wrong container type";
    case FormatError::Kind::Truncated:
        return "truncated file";
    case FormatError::Kind::UnsupportedVersion:
        return "unsupported version";
    case FormatError::Kind::Malformed:
        return "malformed data";
    }
    return "format error";
}

} // namespace goi
