#include "sdrpn/student.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sdrpn {

namespace {

constexpr double kLnEps = 1e-5;
constexpr std::uint64_t kInitStream = 0x1417ea4c0000000bULL;

std::string fmt_shape(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LnCache* cache) {
  const auto d = static_cast<double>(x.cols());
  Mat xhat(x.rows(), x.cols());
  Eigen::VectorXd rstd(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mu).square().sum() / d;
    rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  Mat y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

// Accumulates gain/bias gradients (when given) and returns dL/dx.
Mat layer_norm_backward(const LnCache& c, const Mat& gain, const Mat& dy, Mat* dgain, Mat* dbias) {
  if (dgain) *dgain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).sum() / d;
    const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).sum() / d;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct BlockCache {
  LnCache ln1, ln2;
  Mat a, q, k, v, o, m, u, gel;
  std::vector<Mat> p;  // per-head attention probabilities, zero above the diagonal
};

Mat block_forward(const StudentModel& model, const BlockSlots& s, const Mat& x, BlockCache* c) {
  const auto& P = model.params();
  const auto heads = static_cast<Eigen::Index>(model.config().heads);
  const Eigen::Index T = x.rows();
  const Eigen::Index dh = x.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  LnCache ln1;
  Mat a = layer_norm(x, P[s.ln1_g].value, P[s.ln1_b].value, c ? &ln1 : nullptr);
  Mat q = a * P[s.wq].value;
  Mat k = a * P[s.wk].value;
  Mat v = a * P[s.wv].value;
  Mat o(T, x.cols());
  std::vector<Mat> probs;
  for (Eigen::Index h = 0; h < heads; ++h) {
    Mat sc = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    Mat p = Mat::Zero(T, T);
    for (Eigen::Index i = 0; i < T; ++i) {
      const double mx = (sc.row(i).head(i + 1) * scale).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        p(i, j) = std::exp(sc(i, j) * scale - mx);
        z += p(i, j);
      }
      p.row(i).head(i + 1) /= z;
    }
    o.middleCols(h * dh, dh) = p * v.middleCols(h * dh, dh);
    if (c) probs.push_back(std::move(p));
  }
  Mat x2 = x + o * P[s.wo].value;

  LnCache ln2;
  Mat m = layer_norm(x2, P[s.ln2_g].value, P[s.ln2_b].value, c ? &ln2 : nullptr);
  Mat u = (m * P[s.w1].value).rowwise() + P[s.b1].value.row(0);
  Mat gel = u.unaryExpr([](double t) { return gelu(t); });
  Mat y = x2 + ((gel * P[s.w2].value).rowwise() + P[s.b2].value.row(0));

  if (c) {
    c->ln1 = std::move(ln1);
    c->ln2 = std::move(ln2);
    c->a = std::move(a);
    c->q = std::move(q);
    c->k = std::move(k);
    c->v = std::move(v);
    c->o = std::move(o);
    c->m = std::move(m);
    c->u = std::move(u);
    c->gel = std::move(gel);
    c->p = std::move(probs);
  }
  return y;
}

Mat block_backward(const StudentModel& model, const BlockSlots& s, const BlockCache& c, const Mat& dy,
                   Gradients& g) {
  const auto& P = model.params();
  const auto heads = static_cast<Eigen::Index>(model.config().heads);
  const Eigen::Index dh = dy.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch
  g.g[s.w2] += c.gel.transpose() * dy;
  g.g[s.b2] += dy.colwise().sum();
  Mat du = (dy * P[s.w2].value.transpose()).array() * c.u.unaryExpr([](double t) { return gelu_grad(t); }).array();
  g.g[s.w1] += c.m.transpose() * du;
  g.g[s.b1] += du.colwise().sum();
  Mat dm = du * P[s.w1].value.transpose();
  Mat dx2 = dy + layer_norm_backward(c.ln2, P[s.ln2_g].value, dm, &g.g[s.ln2_g], &g.g[s.ln2_b]);

  // attention branch
  g.g[s.wo] += c.o.transpose() * dx2;
  Mat dout = dx2 * P[s.wo].value.transpose();
  Mat dq(dy.rows(), dy.cols()), dk(dy.rows(), dy.cols()), dv(dy.rows(), dy.cols());
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Mat& p = c.p[static_cast<std::size_t>(h)];
    const auto doh = dout.middleCols(h * dh, dh);
    Mat dp = doh * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = p.transpose() * doh;
    const Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
    Mat ds = (p.array() * (dp.colwise() - rs).array()) * scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.g[s.wq] += c.a.transpose() * dq;
  g.g[s.wk] += c.a.transpose() * dk;
  g.g[s.wv] += c.a.transpose() * dv;
  Mat da = dq * P[s.wq].value.transpose() + dk * P[s.wk].value.transpose() + dv * P[s.wv].value.transpose();
  return dx2 + layer_norm_backward(c.ln1, P[s.ln1_g].value, da, &g.g[s.ln1_g], &g.g[s.ln1_b]);
}

Mat embed(const StudentModel& m, const StudentInput& in) {
  const auto& P = m.params();
  if (in.visual.cols() != m.feature_dim() || in.queries.cols() != m.feature_dim())
    throw std::invalid_argument("feature dim mismatch: model expects " + std::to_string(m.feature_dim()) +
                                ", input has " + std::to_string(in.visual.cols()) + " (visual) / " +
                                std::to_string(in.queries.cols()) + " (queries)");
  const Mat& w = P[m.embed_w()].value;
  const Mat& b = P[m.embed_b()].value;
  Mat x(in.visual.rows() + in.queries.rows(), w.cols());
  x.topRows(in.visual.rows()) = ((in.visual * w).rowwise() + b.row(0)).rowwise() + P[m.type_visual()].value.row(0);
  x.bottomRows(in.queries.rows()) =
      ((in.queries * w).rowwise() + b.row(0)).rowwise() + P[m.type_query()].value.row(0);
  return x;
}

Mat random_matrix(RngStream& rng, Eigen::Index r, Eigen::Index c, double sd) {
  Mat out(r, c);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = sd * rng.normal();
  return out;
}

std::uint64_t hash_params(const std::vector<Param>& params, bool frozen_only) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    if (frozen_only && p.trainable) continue;
    h = fnv1a64({reinterpret_cast<const std::uint8_t*>(p.name.data()), p.name.size()}, h);
    std::vector<double> v(p.value.data(), p.value.data() + p.value.size());
    const auto bytes = encode_grid(
        Grid({static_cast<std::uint32_t>(p.value.rows()), static_cast<std::uint32_t>(p.value.cols())}, std::move(v)));
    h = fnv1a64(bytes, h);
  }
  return h;
}

struct HeadCache {
  LnCache lr, lv;
  Mat ar, av, q, k;
};

Mat head_forward(const StudentModel& m, const Mat& roi_states, const Mat& visual_states, HeadCache* c) {
  const auto& P = m.params();
  const auto& s = m.block(m.config().frozen + m.config().trainable - 1);
  LnCache lr, lv;
  Mat ar = layer_norm(roi_states, P[s.ln1_g].value, P[s.ln1_b].value, c ? &lr : nullptr);
  Mat av = layer_norm(visual_states, P[s.ln1_g].value, P[s.ln1_b].value, c ? &lv : nullptr);
  Mat q = ar * P[s.wq].value;
  Mat k = av * P[s.wk].value;
  Mat logits = head_average_logits(q, k, m.config().heads);
  if (c) {
    c->lr = std::move(lr);
    c->lv = std::move(lv);
    c->ar = std::move(ar);
    c->av = std::move(av);
    c->q = std::move(q);
    c->k = std::move(k);
  }
  return logits;
}

}  // namespace

LossKind parse_loss_kind(const std::string& s) {
  if (s == "bce") return LossKind::bce;
  if (s == "mse") return LossKind::mse;
  throw std::invalid_argument("unknown loss '" + s + "' (expected bce or mse)");
}

const char* loss_kind_name(LossKind k) { return k == LossKind::bce ? "bce" : "mse"; }

void StudentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("student config: " + m); };
  if (d_model < 1 || heads < 1) fail("d_model and heads must be positive");
  if (d_model % heads != 0) fail("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                                 std::to_string(heads) + ")");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (trainable < 1) fail("trainable depth R must be >= 1");
  if (frozen + trainable > depth)
    fail("B + R (" + std::to_string(frozen + trainable) + ") exceeds depth L (" + std::to_string(depth) + ")");
  if (turns < 1) fail("turns must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail("warmup_ratio must lie in [0, 1)");
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) fail("peak_lr must be finite and non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
}

void StudentModel::build_layout(std::uint32_t feature_dim) {
  feature_dim_ = feature_dim;
  params_.clear();
  blocks_.clear();
  const Eigen::Index d = cfg_.d_model, f = feature_dim, ff = static_cast<Eigen::Index>(cfg_.d_model) * cfg_.mlp_ratio;
  auto add = [&](std::string name, Eigen::Index r, Eigen::Index c) {
    params_.push_back({std::move(name), Mat::Zero(r, c), false});
    return params_.size() - 1;
  };
  w_in_ = add("embed.w_in", f, d);
  b_in_ = add("embed.b_in", 1, d);
  type_vis_ = add("embed.type_visual", 1, d);
  type_q_ = add("embed.type_query", 1, d);
  for (std::uint32_t i = 0; i < cfg_.depth; ++i) {
    const std::string p = "block" + std::to_string(i + 1) + ".";
    BlockSlots s{};
    s.ln1_g = add(p + "ln1_gain", 1, d);
    s.ln1_b = add(p + "ln1_bias", 1, d);
    s.wq = add(p + "wq", d, d);
    s.wk = add(p + "wk", d, d);
    s.wv = add(p + "wv", d, d);
    s.wo = add(p + "wo", d, d);
    s.ln2_g = add(p + "ln2_gain", 1, d);
    s.ln2_b = add(p + "ln2_bias", 1, d);
    s.w1 = add(p + "w1", d, ff);
    s.b1 = add(p + "b1", 1, ff);
    s.w2 = add(p + "w2", ff, d);
    s.b2 = add(p + "b2", 1, d);
    params_[s.ln1_g].value.setOnes();
    params_[s.ln2_g].value.setOnes();
    blocks_.push_back(s);
  }
}

StudentModel StudentModel::skeleton(const StudentConfig& cfg, std::uint32_t feature_dim) {
  cfg.validate();
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be positive");
  StudentModel m;
  m.cfg_ = cfg;
  m.build_layout(feature_dim);
  for (std::uint32_t i = cfg.frozen; i < cfg.frozen + cfg.trainable; ++i) {
    const auto& s = m.blocks_[i];
    for (auto idx : {s.ln1_g, s.ln1_b, s.wq, s.wk, s.wv, s.wo, s.ln2_g, s.ln2_b, s.w1, s.b1, s.w2, s.b2})
      m.params_[idx].trainable = true;
  }
  return m;
}

StudentModel StudentModel::init_teacher(const StudentConfig& cfg, std::uint32_t feature_dim, std::uint64_t seed) {
  StudentModel m = skeleton(cfg, feature_dim);
  for (auto& p : m.params_) p.trainable = false;
  RngStream root(seed, kInitStream);
  const double d = cfg.d_model;
  const double ff = d * cfg.mlp_ratio;
  const double depth_scale = 1.0 / std::sqrt(2.0 * cfg.depth);
  for (std::size_t i = 0; i < m.params_.size(); ++i) {
    auto& v = m.params_[i].value;
    RngStream rng = root.derive(i);
    const auto& name = m.params_[i].name;
    auto ends_with = [&](const char* s) {
      const std::string suf(s);
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with("w_in")) v = random_matrix(rng, v.rows(), v.cols(), 1.0 / std::sqrt(static_cast<double>(feature_dim)));
    else if (ends_with("type_visual") || ends_with("type_query")) v = random_matrix(rng, v.rows(), v.cols(), 0.5);
    else if (ends_with(".wq") || ends_with(".wk") || ends_with(".wv") || ends_with(".w1"))
      v = random_matrix(rng, v.rows(), v.cols(), 1.0 / std::sqrt(d));
    else if (ends_with(".wo")) v = random_matrix(rng, v.rows(), v.cols(), depth_scale / std::sqrt(d));
    else if (ends_with(".w2")) v = random_matrix(rng, v.rows(), v.cols(), depth_scale / std::sqrt(ff));
  }
  return m;
}

StudentModel StudentModel::from_teacher(const StudentModel& teacher, const StudentConfig& cfg) {
  const auto& t = teacher.cfg_;
  if (t.d_model != cfg.d_model || t.heads != cfg.heads || t.mlp_ratio != cfg.mlp_ratio || t.depth != cfg.depth)
    throw std::invalid_argument("teacher architecture (d_model " + std::to_string(t.d_model) + ", depth " +
                                std::to_string(t.depth) + ") does not match student config (d_model " +
                                std::to_string(cfg.d_model) + ", depth " + std::to_string(cfg.depth) + ")");
  StudentModel m = skeleton(cfg, teacher.feature_dim_);
  for (std::size_t i = 0; i < m.params_.size(); ++i) m.params_[i].value = teacher.params_[i].value;
  return m;
}

const Param& StudentModel::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named '" + name + "'");
}

std::uint64_t StudentModel::frozen_hash() const { return hash_params(params_, true); }
std::uint64_t StudentModel::full_hash() const { return hash_params(params_, false); }

StudentInput make_student_input(const Grid& features, const Grid& queries) {
  if (features.ndim() != 3) throw std::invalid_argument("features grid must be [H, W, d]");
  if (queries.ndim() != 2) throw std::invalid_argument("queries grid must be [turns, d]");
  if (features.dim(2) != queries.dim(1))
    throw std::invalid_argument("features have d=" + std::to_string(features.dim(2)) + " but queries have d=" +
                                std::to_string(queries.dim(1)));
  const auto fv = features.to_f64();
  const auto qv = queries.to_f64();
  StudentInput in;
  in.visual = Eigen::Map<const Mat>(fv.data(), static_cast<Eigen::Index>(features.dim(0)) * features.dim(1),
                                    features.dim(2));
  in.queries = Eigen::Map<const Mat>(qv.data(), queries.dim(0), queries.dim(1));
  return in;
}

Mat frozen_backbone(const StudentModel& m, const StudentInput& in) {
  Mat x = embed(m, in);
  for (std::uint32_t i = 0; i < m.config().frozen; ++i) x = block_forward(m, m.block(i), x, nullptr);
  return x;
}

Mat forward_hidden_from(const StudentModel& m, const Mat& frozen_out) {
  if (frozen_out.cols() != m.config().d_model)
    throw std::invalid_argument("hidden width " + std::to_string(frozen_out.cols()) + " != d_model " +
                                std::to_string(m.config().d_model));
  Mat x = frozen_out;
  const auto& c = m.config();
  for (std::uint32_t i = c.frozen; i + 1 < c.frozen + c.trainable; ++i) x = block_forward(m, m.block(i), x, nullptr);
  return x;
}

Mat forward_hidden(const StudentModel& m, const StudentInput& in) { return forward_hidden_from(m, frozen_backbone(m, in)); }

Mat select_query_states(const Mat& hidden, std::span<const std::size_t> boundaries) {
  Mat out(static_cast<Eigen::Index>(boundaries.size()), hidden.cols());
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (boundaries[i] >= static_cast<std::size_t>(hidden.rows()))
      throw std::out_of_range("turn boundary " + std::to_string(boundaries[i]) + " outside sequence of length " +
                              std::to_string(hidden.rows()));
    out.row(static_cast<Eigen::Index>(i)) = hidden.row(static_cast<Eigen::Index>(boundaries[i]));
  }
  return out;
}

std::vector<std::size_t> default_boundaries(std::size_t visual_tokens, std::size_t turns) {
  std::vector<std::size_t> b(turns);
  for (std::size_t i = 0; i < turns; ++i) b[i] = visual_tokens + i;
  return b;
}

Mat head_average_logits(const Mat& q, const Mat& k, std::uint32_t heads) {
  if (q.cols() != k.cols() || heads == 0 || q.cols() % heads != 0)
    throw std::invalid_argument("query/key widths " + fmt_shape(q) + " / " + fmt_shape(k) + " do not split into " +
                                std::to_string(heads) + " heads");
  const Eigen::Index dh = q.cols() / heads;
  Mat out = Mat::Zero(q.rows(), k.rows());
  for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(heads); ++h)
    out += q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
  return out / static_cast<double>(heads);
}

Mat predict_roi(const StudentModel& m, const Mat& hidden, const Mat& roi_states, std::size_t visual_tokens) {
  if (visual_tokens > static_cast<std::size_t>(hidden.rows()))
    throw std::out_of_range("visual token count exceeds sequence length");
  if (hidden.cols() != m.config().d_model || roi_states.cols() != m.config().d_model)
    throw std::invalid_argument("hidden width does not match d_model " + std::to_string(m.config().d_model));
  return head_forward(m, roi_states, hidden.topRows(static_cast<Eigen::Index>(visual_tokens)), nullptr);
}

LossTerms masked_bce_terms(const Mat& logits, const Mat& targets, const Mat& valid) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols() || logits.rows() != valid.rows() ||
      logits.cols() != valid.cols())
    throw std::invalid_argument("loss shapes disagree: logits " + fmt_shape(logits) + ", targets " +
                                fmt_shape(targets) + ", mask " + fmt_shape(valid));
  LossTerms t;
  t.grad = Mat::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (valid.data()[i] == 0.0) continue;
    const double z = logits.data()[i], y = targets.data()[i];
    t.sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    t.grad.data()[i] = sigmoid(z) - y;
    ++t.count;
  }
  return t;
}

LossTerms masked_mse_terms(const Mat& logits, const Mat& targets, const Mat& valid) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols() || logits.rows() != valid.rows() ||
      logits.cols() != valid.cols())
    throw std::invalid_argument("loss shapes disagree: logits " + fmt_shape(logits) + ", targets " +
                                fmt_shape(targets) + ", mask " + fmt_shape(valid));
  LossTerms t;
  t.grad = Mat::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (valid.data()[i] == 0.0) continue;
    const double s = sigmoid(logits.data()[i]);
    const double e = s - targets.data()[i];
    t.sum += e * e;
    t.grad.data()[i] = 2.0 * e * s * (1.0 - s);
    ++t.count;
  }
  return t;
}

LossValue masked_bce_loss(const Mat& logits, const Mat& labels) {
  Mat valid = (labels.array() != -1.0).cast<double>();
  Mat targets = labels.cwiseMax(0.0);
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double l = labels.data()[i];
    if (l != -1.0 && l != 0.0 && l != 1.0) throw std::invalid_argument("labels must lie in {-1, 0, 1}");
  }
  auto t = masked_bce_terms(logits, targets, valid);
  LossValue out;
  out.valid = t.count;
  if (t.count == 0) {
    out.skipped = true;
    out.grad = Mat::Zero(logits.rows(), logits.cols());
    return out;
  }
  out.loss = t.sum / static_cast<double>(t.count);
  out.grad = t.grad / static_cast<double>(t.count);
  return out;
}

void Gradients::zero_like(const StudentModel& m) {
  g.assign(m.params().size(), Mat());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (m.params()[i].trainable) g[i] = Mat::Zero(m.params()[i].value.rows(), m.params()[i].value.cols());
}

void Gradients::scale(double s) {
  for (auto& x : g) x *= s;
}

Mat predict_from_frozen(const StudentModel& m, const Mat& frozen_out, std::size_t visual_tokens) {
  const Mat hidden = forward_hidden_from(m, frozen_out);
  const auto bounds = default_boundaries(visual_tokens, static_cast<std::size_t>(hidden.rows()) - visual_tokens);
  return predict_roi(m, hidden, select_query_states(hidden, bounds), visual_tokens);
}

Mat predict(const StudentModel& m, const StudentInput& in) {
  return predict_from_frozen(m, frozen_backbone(m, in), static_cast<std::size_t>(in.visual.rows()));
}

LossTerms forward_backward(const StudentModel& m, const Mat& frozen_out, std::size_t visual_tokens,
                           const ExampleTargets& t, LossKind loss, Gradients& grads) {
  const auto& cfg = m.config();
  const auto& P = m.params();
  if (grads.g.size() != P.size()) grads.zero_like(m);
  const auto N = static_cast<Eigen::Index>(visual_tokens);
  if (N > frozen_out.rows()) throw std::out_of_range("visual token count exceeds sequence length");

  const std::size_t inner = cfg.trainable - 1;
  std::vector<BlockCache> caches(inner);
  Mat x = frozen_out;
  for (std::size_t i = 0; i < inner; ++i) x = block_forward(m, m.block(cfg.frozen + i), x, &caches[i]);

  const Eigen::Index n = x.rows() - N;
  HeadCache hc;
  const Mat logits = head_forward(m, x.bottomRows(n), x.topRows(N), &hc);
  LossTerms terms = loss == LossKind::bce ? masked_bce_terms(logits, t.targets, t.valid)
                                          : masked_mse_terms(logits, t.targets, t.valid);
  if (terms.count == 0) return terms;

  const auto& s = m.block(cfg.frozen + cfg.trainable - 1);
  const double inv_h = 1.0 / static_cast<double>(cfg.heads);
  // Per-head products summed over heads are the full product, so the backward pass uses Q K^T directly.
  const Mat dq = terms.grad * hc.k * inv_h;
  const Mat dk = terms.grad.transpose() * hc.q * inv_h;
  grads.g[s.wq] += hc.ar.transpose() * dq;
  grads.g[s.wk] += hc.av.transpose() * dk;
  const Mat dar = dq * P[s.wq].value.transpose();
  const Mat dav = dk * P[s.wk].value.transpose();

  Mat dx = Mat::Zero(x.rows(), x.cols());
  dx.bottomRows(n) = layer_norm_backward(hc.lr, P[s.ln1_g].value, dar, &grads.g[s.ln1_g], &grads.g[s.ln1_b]);
  dx.topRows(N) = layer_norm_backward(hc.lv, P[s.ln1_g].value, dav, &grads.g[s.ln1_g], &grads.g[s.ln1_b]);

  for (std::size_t i = inner; i-- > 0;) dx = block_backward(m, m.block(cfg.frozen + i), caches[i], dx, grads);
  return terms;
}

}  // namespace sdrpn
