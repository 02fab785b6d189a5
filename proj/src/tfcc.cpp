#include "goi/tfcc.hpp"

#include "goi/binary_io.hpp"
#include "goi/errors.hpp"

#include <cmath>
#include <random>

namespace goi {

namespace {

constexpr char kCodebookMagic[] = "GOIC";
constexpr char kDecoderMagic[] = "GOID";
constexpr std::uint32_t kContainerVersion = 1;

double checked_norm(const Eigen::Ref<const Eigen::VectorXd>& v, const char* what) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ValidationError(std::string(what) + " must be a finite non-zero vector");
    }
    return n;
}

void check_dims(std::size_t got, std::size_t expected, const char* what) {
    if (got != expected) {
        throw ValidationError(std::string(what) + ": dimension " + std::to_string(got) + ", expected " +
                              std::to_string(expected));
    }
}

// Row-wise stable softmax; also returns log-probabilities.
void softmax_rows(const Eigen::MatrixXd& z, Eigen::MatrixXd& p, Eigen::MatrixXd& log_p) {
    const Eigen::VectorXd m = z.rowwise().maxCoeff();
    log_p = z.colwise() - m;
    p = log_p.array().exp();
    const Eigen::VectorXd lse = p.rowwise().sum().array().log();
    log_p.colwise() -= lse;
    p = log_p.array().exp();
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& z) {
    const double m = z.maxCoeff();
    Eigen::VectorXd p = (z.array() - m).exp();
    return p / p.sum();
}

} // namespace

void Codebook::validate() const {
    if (entries.rows() < 2) {
        throw ValidationError("codebook needs at least 2 entries");
    }
    for (Eigen::Index i = 0; i < entries.rows(); ++i) {
        const double n = entries.row(i).cast<double>().norm();
        if (!std::isfinite(n) || n < kMinEntryNorm) {
            throw ValidationError("codebook entry " + std::to_string(i) + " is zero or non-finite");
        }
    }
}

void Decoder::validate() const {
    if (bias.size() != weight.rows()) {
        throw ValidationError("decoder bias length does not match weight rows");
    }
    if (!weight.allFinite() || !bias.allFinite()) {
        throw ValidationError("decoder has non-finite parameters");
    }
}

Decoder Decoder::random_init(std::size_t out_dim, std::size_t in_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, in_dim)));
    std::uniform_real_distribution<double> u(-bound, bound);
    Decoder dec;
    dec.weight.resize(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in_dim));
    dec.bias.resize(static_cast<Eigen::Index>(out_dim));
    for (Eigen::Index r = 0; r < dec.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < dec.weight.cols(); ++c) {
            dec.weight(r, c) = static_cast<float>(u(rng));
        }
    }
    for (Eigen::Index r = 0; r < dec.bias.size(); ++r) {
        dec.bias(r) = static_cast<float>(u(rng));
    }
    return dec;
}

std::size_t argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& values) {
    std::size_t best = 0;
    for (Eigen::Index i = 1; i < values.size(); ++i) {
        if (values(i) > values(static_cast<Eigen::Index>(best))) {
            best = static_cast<std::size_t>(i);
        }
    }
    return best;
}

Eigen::VectorXd decode_logits(const Eigen::Ref<const Eigen::VectorXd>& feature, const Decoder& dec) {
    check_dims(static_cast<std::size_t>(feature.size()), dec.in_dim(), "decode_logits feature");
    return dec.weight.cast<double>() * feature + dec.bias.cast<double>();
}

HardDecode decode_hard(const Eigen::Ref<const Eigen::VectorXd>& logits, const Codebook& cb) {
    check_dims(static_cast<std::size_t>(logits.size()), cb.size(), "decode_hard logits");
    HardDecode out;
    out.index = argmax_lowest(logits);
    out.value = cb.entries.row(static_cast<Eigen::Index>(out.index)).transpose().cast<double>();
    return out;
}

Eigen::VectorXd decode_soft(const Eigen::Ref<const Eigen::VectorXd>& logits, const Eigen::Ref<const Eigen::MatrixXd>& entries,
                            double temp) {
    if (!(temp > 0.0)) {
        throw ValidationError("decode_soft: temperature must be positive");
    }
    check_dims(static_cast<std::size_t>(logits.size()), static_cast<std::size_t>(entries.rows()), "decode_soft logits");
    const Eigen::VectorXd q = softmax(temp * logits);
    return entries.transpose() * q;
}

std::size_t assign_entry(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& entries) {
    check_dims(static_cast<std::size_t>(v_gt.size()), static_cast<std::size_t>(entries.cols()), "assign_entry v_gt");
    const double vn = checked_norm(v_gt, "assign_entry: v_gt");
    Eigen::VectorXd cos(entries.rows());
    for (Eigen::Index i = 0; i < entries.rows(); ++i) {
        const double en = checked_norm(entries.row(i).transpose(), "assign_entry: codebook entry");
        cos(i) = entries.row(i).dot(v_gt) / (vn * en);
    }
    return argmax_lowest(cos);
}

EntryLoss loss_ent(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& entries,
                   double tau) {
    if (!(tau > 0.0)) {
        throw ValidationError("loss_ent: tau must be positive");
    }
    check_dims(static_cast<std::size_t>(v_gt.size()), static_cast<std::size_t>(entries.cols()), "loss_ent v_gt");
    const Eigen::Index n = entries.rows();
    const double vn = checked_norm(v_gt, "loss_ent: v_gt");
    const Eigen::VectorXd v_hat = v_gt / vn;

    Eigen::VectorXd norms(n), cos(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        norms(i) = checked_norm(entries.row(i).transpose(), "loss_ent: codebook entry");
        cos(i) = entries.row(i).dot(v_hat) / norms(i);
    }
    const Eigen::VectorXd z = tau * cos;
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    const Eigen::VectorXd log_p = z.array() - lse;
    const Eigen::VectorXd p = log_p.array().exp();
    const double h = -(p.array() * log_p.array()).sum();

    EntryLoss out;
    out.value = h;
    out.grad_entries.resize(n, entries.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        // dH/dz_i = -p_i (log p_i + H); dcos_i/dT_i = (v_hat - cos_i T_hat_i) / |T_i|
        const double dz = -p(i) * (log_p(i) + h);
        const double dcos = tau * dz;
        out.grad_entries.row(i) =
            dcos * (v_hat.transpose() - cos(i) * entries.row(i) / norms(i)) / norms(i);
    }
    return out;
}

EntryLoss loss_max(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& entries) {
    const std::size_t d = assign_entry(v_gt, entries);
    const auto di = static_cast<Eigen::Index>(d);
    const double vn = v_gt.norm();
    const Eigen::VectorXd v_hat = v_gt / vn;
    const double en = entries.row(di).norm();
    const double c = entries.row(di).dot(v_hat) / en;

    EntryLoss out;
    out.value = 1.0 - c;
    out.grad_entries = Eigen::MatrixXd::Zero(entries.rows(), entries.cols());
    out.grad_entries.row(di) = -(v_hat.transpose() - c * entries.row(di) / en) / en;
    return out;
}

VectorLoss loss_joint(const Eigen::Ref<const Eigen::VectorXd>& logits, std::size_t d) {
    if (d >= static_cast<std::size_t>(logits.size())) {
        throw ValidationError("loss_joint: entry index " + std::to_string(d) + " out of range");
    }
    Eigen::VectorXd diff = logits;
    diff(static_cast<Eigen::Index>(d)) -= 1.0;
    return {diff.squaredNorm(), 2.0 * diff};
}

VectorLoss loss_e2e(const Eigen::Ref<const Eigen::VectorXd>& v_gt, const Eigen::Ref<const Eigen::VectorXd>& v) {
    check_dims(static_cast<std::size_t>(v.size()), static_cast<std::size_t>(v_gt.size()), "loss_e2e v");
    const double gn = checked_norm(v_gt, "loss_e2e: v_gt");
    const double n = checked_norm(v, "loss_e2e: v");
    const Eigen::VectorXd g_hat = v_gt / gn;
    const Eigen::VectorXd v_hat = v / n;
    const double c = g_hat.dot(v_hat);
    return {1.0 - c, -(g_hat - c * v_hat) / n};
}

BatchLoss total_loss(const Eigen::Ref<const Eigen::MatrixXd>& v_gt, const Eigen::Ref<const Eigen::MatrixXd>& features,
                     const Eigen::Ref<const Eigen::MatrixXd>& entries, const Eigen::Ref<const Eigen::MatrixXd>& weight,
                     const Eigen::Ref<const Eigen::VectorXd>& bias, double tau, const LossWeights& weights,
                     double temp_decode) {
    const Eigen::Index p = v_gt.rows();
    const Eigen::Index n = entries.rows();
    if (p == 0) {
        throw ValidationError("total_loss: empty batch");
    }
    if (!(tau > 0.0) || !(temp_decode > 0.0)) {
        throw ValidationError("total_loss: temperatures must be positive");
    }
    if (!std::isfinite(weights.ent) || !std::isfinite(weights.max) || !std::isfinite(weights.joint) ||
        !std::isfinite(weights.e2e)) {
        throw ValidationError("total_loss: loss weights must be finite");
    }
    check_dims(static_cast<std::size_t>(features.rows()), static_cast<std::size_t>(p), "total_loss feature rows");
    check_dims(static_cast<std::size_t>(v_gt.cols()), static_cast<std::size_t>(entries.cols()), "total_loss v_gt");
    check_dims(static_cast<std::size_t>(weight.rows()), static_cast<std::size_t>(n), "total_loss decoder rows");
    check_dims(static_cast<std::size_t>(weight.cols()), static_cast<std::size_t>(features.cols()), "total_loss decoder cols");
    check_dims(static_cast<std::size_t>(bias.size()), static_cast<std::size_t>(n), "total_loss bias");

    const double inv_p = 1.0 / static_cast<double>(p);

    // Normalized ground truth and entries.
    Eigen::VectorXd gt_norm = v_gt.rowwise().norm();
    Eigen::VectorXd entry_norm = entries.rowwise().norm();
    if (!(gt_norm.array() > 0.0).all() || !gt_norm.allFinite()) {
        throw ValidationError("total_loss: zero or non-finite ground-truth feature");
    }
    if (!(entry_norm.array() > 0.0).all() || !entry_norm.allFinite()) {
        throw ValidationError("total_loss: zero or non-finite codebook entry");
    }
    const Eigen::MatrixXd gt_hat = gt_norm.cwiseInverse().asDiagonal() * v_gt;
    const Eigen::MatrixXd entry_hat = entry_norm.cwiseInverse().asDiagonal() * entries;

    // Cosine similarities, entropy and assignment.
    const Eigen::MatrixXd cos = gt_hat * entry_hat.transpose(); // P x N
    Eigen::MatrixXd prob, log_prob;
    softmax_rows(tau * cos, prob, log_prob);
    const Eigen::VectorXd entropy = -(prob.array() * log_prob.array()).rowwise().sum();

    std::vector<Eigen::Index> assigned(static_cast<std::size_t>(p));
    double sum_max = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
        assigned[static_cast<std::size_t>(j)] = static_cast<Eigen::Index>(argmax_lowest(cos.row(j).transpose()));
        sum_max += 1.0 - cos(j, assigned[static_cast<std::size_t>(j)]);
    }

    // dL/dcos for L_ent and L_max.
    Eigen::MatrixXd g_cos = (weights.ent * inv_p * tau) *
                            (-(prob.array() * (log_prob.array().colwise() + entropy.array()))).matrix();
    for (Eigen::Index j = 0; j < p; ++j) {
        g_cos(j, assigned[static_cast<std::size_t>(j)]) -= weights.max * inv_p;
    }
    // dcos_ji/dT_i = (gt_hat_j - cos_ji entry_hat_i) / |T_i|
    Eigen::MatrixXd grad_entries = g_cos.transpose() * gt_hat;
    const Eigen::VectorXd col_scale = (g_cos.array() * cos.array()).colwise().sum().transpose();
    grad_entries -= col_scale.asDiagonal() * entry_hat;
    grad_entries = entry_norm.cwiseInverse().asDiagonal() * grad_entries;

    // Decoder logits and soft decode.
    const Eigen::MatrixXd logits = (features * weight.transpose()).rowwise() + bias.transpose(); // P x N
    Eigen::MatrixXd q, log_q;
    softmax_rows(temp_decode * logits, q, log_q);
    const Eigen::MatrixXd soft = q * entries; // P x D_high
    const Eigen::VectorXd soft_norm = soft.rowwise().norm();
    if (!(soft_norm.array() > 0.0).all() || !soft_norm.allFinite()) {
        throw NumericError("total_loss: soft-decoded feature vanished");
    }
    const Eigen::MatrixXd soft_hat = soft_norm.cwiseInverse().asDiagonal() * soft;
    const Eigen::VectorXd e2e_cos = (gt_hat.array() * soft_hat.array()).rowwise().sum();

    // d(1 - cos)/dv = -(gt_hat - c v_hat) / |v|
    Eigen::MatrixXd g_soft = gt_hat - e2e_cos.asDiagonal() * soft_hat;
    g_soft = (-weights.e2e * inv_p) * (soft_norm.cwiseInverse().asDiagonal() * g_soft);
    grad_entries += q.transpose() * g_soft;

    const Eigen::MatrixXd g_q = g_soft * entries.transpose(); // P x N
    const Eigen::VectorXd qg = (q.array() * g_q.array()).rowwise().sum();
    Eigen::MatrixXd g_logits = temp_decode * (q.array() * (g_q.array().colwise() - qg.array())).matrix();

    Eigen::MatrixXd residual = logits;
    for (Eigen::Index j = 0; j < p; ++j) {
        residual(j, assigned[static_cast<std::size_t>(j)]) -= 1.0;
    }
    const double sum_joint = residual.squaredNorm();
    g_logits += (2.0 * weights.joint * inv_p) * residual;

    BatchLoss out;
    out.terms.ent = entropy.mean();
    out.terms.max = sum_max * inv_p;
    out.terms.joint = sum_joint * inv_p;
    out.terms.e2e = (1.0 - e2e_cos.array()).mean();
    out.terms.total = weights.ent * out.terms.ent + weights.max * out.terms.max + weights.joint * out.terms.joint +
                      weights.e2e * out.terms.e2e;
    out.grad.entries = std::move(grad_entries);
    out.grad.weight = g_logits.transpose() * features;
    out.grad.bias = g_logits.colwise().sum().transpose();
    out.grad.features = g_logits * weight;
    return out;
}

// Containers -----------------------------------------------------------------

std::vector<std::uint8_t> encode_codebook(const Codebook& cb) {
    ByteWriter w;
    w.magic(kCodebookMagic);
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(cb.size()));
    w.u32(static_cast<std::uint32_t>(cb.dim()));
    w.f32s({cb.entries.data(), static_cast<std::size_t>(cb.entries.size())});
    return w.take();
}

Codebook decode_codebook(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    r.expect_magic(kCodebookMagic);
    const std::uint32_t version = r.u32();
    if (version != kContainerVersion) {
        throw FormatError(FormatError::Kind::UnsupportedVersion, context + ": version " + std::to_string(version));
    }
    const std::uint32_t n = r.u32();
    const std::uint32_t d = r.u32();
    const std::uint64_t count = std::uint64_t{n} * d;
    if (count > r.remaining() / sizeof(float)) {
        throw FormatError(FormatError::Kind::Truncated, context + ": entry table is short");
    }
    Codebook cb;
    cb.entries.resize(n, d);
    r.f32s({cb.entries.data(), static_cast<std::size_t>(count)});
    r.expect_end();
    cb.validate();
    return cb;
}

Codebook load_codebook(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_codebook(bytes, path.string());
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
    cb.validate();
    write_file_bytes(path, encode_codebook(cb));
}

std::vector<std::uint8_t> encode_decoder(const Decoder& dec) {
    ByteWriter w;
    w.magic(kDecoderMagic);
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(dec.in_dim()));
    w.u32(static_cast<std::uint32_t>(dec.out_dim()));
    w.f32s({dec.weight.data(), static_cast<std::size_t>(dec.weight.size())});
    w.f32s({dec.bias.data(), static_cast<std::size_t>(dec.bias.size())});
    return w.take();
}

Decoder decode_decoder(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    r.expect_magic(kDecoderMagic);
    const std::uint32_t version = r.u32();
    if (version != kContainerVersion) {
        throw FormatError(FormatError::Kind::UnsupportedVersion, context + ": version " + std::to_string(version));
    }
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    const std::uint64_t count = std::uint64_t{out} * in + out;
    if (count > r.remaining() / sizeof(float)) {
        throw FormatError(FormatError::Kind::Truncated, context + ": parameter block is short");
    }
    Decoder dec;
    dec.weight.resize(out, in);
    dec.bias.resize(out);
    r.f32s({dec.weight.data(), static_cast<std::size_t>(dec.weight.size())});
    r.f32s({dec.bias.data(), static_cast<std::size_t>(dec.bias.size())});
    r.expect_end();
    dec.validate();
    return dec;
}

Decoder load_decoder(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_decoder(bytes, path.string());
}

void save_decoder(const Decoder& dec, const std::filesystem::path& path) {
    dec.validate();
    write_file_bytes(path, encode_decoder(dec));
}

} // namespace goi
