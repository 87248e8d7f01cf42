#include "scgs/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "scgs/error.hpp"

namespace scgs {

using nlohmann::json;

ArchSpec ArchSpec::default_for(int height, int width, int channels, int n_classes) {
  ArchSpec s;
  s.input_height = height;
  s.input_width = width;
  s.input_channels = channels;
  s.n_classes = n_classes;
  s.blocks = {{16, 3, 1}, {32, 3, 2}, {32, 3, 2}};
  s.input_shift = 0.5;
  return s;
}

std::vector<std::pair<int, int>> ArchSpec::spatial_dims() const {
  if (input_height < 1 || input_width < 1 || input_channels < 1) throw SpecError("input dims must be positive");
  if (n_classes < 1) throw SpecError("n_classes must be positive");
  if (blocks.empty()) throw SpecError("architecture needs at least one conv block");
  std::vector<std::pair<int, int>> dims;
  int h = input_height, w = input_width;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.out_channels < 1 || b.kernel < 1 || b.stride < 1)
      throw SpecError("block " + std::to_string(i) + ": channels, kernel and stride must be positive");
    int pad = (b.kernel - 1) / 2;
    if (h / b.stride < 1 || w / b.stride < 1 || h + 2 * pad < b.kernel || w + 2 * pad < b.kernel)
      throw SpecError("block " + std::to_string(i) + ": spatial dims collapse below 1x1 (input " +
                      std::to_string(h) + "x" + std::to_string(w) + ")");
    h = (h + 2 * pad - b.kernel) / b.stride + 1;
    w = (w + 2 * pad - b.kernel) / b.stride + 1;
    dims.emplace_back(h, w);
  }
  return dims;
}

size_t ArchSpec::parameter_count() const {
  spatial_dims();
  size_t n = 0;
  int in_c = input_channels;
  for (const auto& b : blocks) {
    n += static_cast<size_t>(b.out_channels) * in_c * b.kernel * b.kernel + b.out_channels;
    in_c = b.out_channels;
  }
  return n + static_cast<size_t>(n_classes) * in_c + n_classes;
}

struct Classifier::Trace {
  int batch = 0;
  RowMatrix input;               // C x (B*H*W)
  std::vector<RowMatrix> cols;   // per layer: (in_c*k*k) x (B*out_hw)
  std::vector<RowMatrix> acts;   // per layer, post-ReLU: out_c x (B*out_hw)
  Eigen::MatrixXd features;      // D x B
  Eigen::MatrixXd logits;        // n x B
};

namespace {

void im2col(const RowMatrix& x, int batch, int in_c, int in_h, int in_w, int k, int stride, int pad, int out_h,
            int out_w, RowMatrix& cols) {
  const int in_hw = in_h * in_w, out_hw = out_h * out_w;
  cols.resize(static_cast<Eigen::Index>(in_c) * k * k, static_cast<Eigen::Index>(batch) * out_hw);
  for (int ci = 0; ci < in_c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((ci * k + ky) * k + kx).data();
        const double* src = x.row(ci).data();
        for (int b = 0; b < batch; ++b) {
          const double* img = src + static_cast<size_t>(b) * in_hw;
          double* dst = row + static_cast<size_t>(b) * out_hw;
          for (int oy = 0; oy < out_h; ++oy) {
            int iy = oy * stride - pad + ky;
            double* drow = dst + static_cast<size_t>(oy) * out_w;
            if (iy < 0 || iy >= in_h) {
              std::memset(drow, 0, sizeof(double) * out_w);
              continue;
            }
            const double* srow = img + static_cast<size_t>(iy) * in_w;
            for (int ox = 0; ox < out_w; ++ox) {
              int ix = ox * stride - pad + kx;
              drow[ox] = (ix >= 0 && ix < in_w) ? srow[ix] : 0.0;
            }
          }
        }
      }
}

void col2im(const RowMatrix& dcols, int batch, int in_c, int in_h, int in_w, int k, int stride, int pad, int out_h,
            int out_w, RowMatrix& dx) {
  const int in_hw = in_h * in_w, out_hw = out_h * out_w;
  dx.setZero(in_c, static_cast<Eigen::Index>(batch) * in_hw);
  for (int ci = 0; ci < in_c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = dcols.row((ci * k + ky) * k + kx).data();
        double* dst = dx.row(ci).data();
        for (int b = 0; b < batch; ++b) {
          double* img = dst + static_cast<size_t>(b) * in_hw;
          const double* src = row + static_cast<size_t>(b) * out_hw;
          for (int oy = 0; oy < out_h; ++oy) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= in_h) continue;
            double* drow = img + static_cast<size_t>(iy) * in_w;
            const double* srow = src + static_cast<size_t>(oy) * out_w;
            for (int ox = 0; ox < out_w; ++ox) {
              int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < in_w) drow[ix] += srow[ox];
            }
          }
        }
      }
}

}  // namespace

Classifier::Classifier(ArchSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  build_layout();
  std::mt19937_64 rng(seed);
  for (const auto& l : layout_) {
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / (l.in_c * l.k * l.k)));
    for (size_t i = 0; i < static_cast<size_t>(l.out_c) * l.in_c * l.k * l.k; ++i) params_[l.w_offset + i] = he(rng);
  }
  int d = spec_.feature_dim();
  std::normal_distribution<double> head(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (size_t i = 0; i < static_cast<size_t>(spec_.n_classes) * d; ++i) params_[head_w_offset_ + i] = head(rng);
}

void Classifier::build_layout() {
  auto dims = spec_.spatial_dims();
  layout_.clear();
  size_t off = 0;
  int in_c = spec_.input_channels, in_h = spec_.input_height, in_w = spec_.input_width;
  for (size_t i = 0; i < spec_.blocks.size(); ++i) {
    const auto& b = spec_.blocks[i];
    Layout l{};
    l.in_c = in_c;
    l.out_c = b.out_channels;
    l.k = b.kernel;
    l.stride = b.stride;
    l.pad = (b.kernel - 1) / 2;
    l.in_h = in_h;
    l.in_w = in_w;
    l.out_h = dims[i].first;
    l.out_w = dims[i].second;
    l.w_offset = off;
    off += static_cast<size_t>(l.out_c) * l.in_c * l.k * l.k;
    l.b_offset = off;
    off += l.out_c;
    layout_.push_back(l);
    in_c = l.out_c;
    in_h = l.out_h;
    in_w = l.out_w;
  }
  head_w_offset_ = off;
  off += static_cast<size_t>(spec_.n_classes) * in_c;
  head_b_offset_ = off;
  off += spec_.n_classes;
  params_.assign(off, 0.0);
}

Eigen::Map<RowMatrix> Classifier::conv_weight(size_t block) {
  const auto& l = layout_.at(block);
  return {params_.data() + l.w_offset, l.out_c, static_cast<Eigen::Index>(l.in_c) * l.k * l.k};
}

Eigen::Map<Eigen::VectorXd> Classifier::conv_bias(size_t block) {
  const auto& l = layout_.at(block);
  return {params_.data() + l.b_offset, l.out_c};
}

Eigen::Map<RowMatrix> Classifier::head_weight() {
  return {params_.data() + head_w_offset_, spec_.n_classes, spec_.feature_dim()};
}

Eigen::Map<const RowMatrix> Classifier::head_weight() const {
  return {params_.data() + head_w_offset_, spec_.n_classes, spec_.feature_dim()};
}

Eigen::Map<Eigen::VectorXd> Classifier::head_bias() { return {params_.data() + head_b_offset_, spec_.n_classes}; }

void Classifier::check_input(const Image& img) const {
  if (img.height != spec_.input_height || img.width != spec_.input_width || img.channels != spec_.input_channels)
    throw InputError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                     std::to_string(img.channels) + ", classifier expects " + std::to_string(spec_.input_height) +
                     "x" + std::to_string(spec_.input_width) + "x" + std::to_string(spec_.input_channels));
}

void Classifier::run_forward(std::span<const Image* const> images, Trace& t) const {
  const int batch = static_cast<int>(images.size());
  if (batch == 0) throw InputError("empty batch");
  t.batch = batch;
  const int hw = spec_.input_height * spec_.input_width;
  t.input.resize(spec_.input_channels, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b) {
    const Image& img = *images[b];
    check_input(img);
    for (int p = 0; p < hw; ++p)
      for (int ch = 0; ch < img.channels; ++ch)
        t.input(ch, static_cast<Eigen::Index>(b) * hw + p) = img.data[static_cast<size_t>(p) * img.channels + ch] - spec_.input_shift;
  }
  t.cols.resize(layout_.size());
  t.acts.resize(layout_.size());
  const RowMatrix* x = &t.input;
  for (size_t i = 0; i < layout_.size(); ++i) {
    const auto& l = layout_[i];
    im2col(*x, batch, l.in_c, l.in_h, l.in_w, l.k, l.stride, l.pad, l.out_h, l.out_w, t.cols[i]);
    Eigen::Map<const RowMatrix> w(params_.data() + l.w_offset, l.out_c, static_cast<Eigen::Index>(l.in_c) * l.k * l.k);
    Eigen::Map<const Eigen::VectorXd> bias(params_.data() + l.b_offset, l.out_c);
    t.acts[i].noalias() = w * t.cols[i];
    t.acts[i].colwise() += bias;
    t.acts[i] = t.acts[i].cwiseMax(0.0);
    x = &t.acts[i];
  }
  const auto& last = layout_.back();
  const int out_hw = last.out_h * last.out_w;
  t.features.resize(last.out_c, batch);
  for (int c = 0; c < last.out_c; ++c)
    for (int b = 0; b < batch; ++b)
      t.features(c, b) = t.acts.back().row(c).segment(static_cast<Eigen::Index>(b) * out_hw, out_hw).sum() / out_hw;
  Eigen::Map<const Eigen::VectorXd> hb(params_.data() + head_b_offset_, spec_.n_classes);
  t.logits.noalias() = head_weight() * t.features;
  t.logits.colwise() += hb;
}

void Classifier::run_backward(const Trace& t, const Eigen::MatrixXd& dlogits, std::vector<double>* grad,
                              RowMatrix* d_last) const {
  if (grad) grad->assign(params_.size(), 0.0);
  const auto& last = layout_.back();
  const int out_hw = last.out_h * last.out_w;
  if (grad) {
    Eigen::Map<RowMatrix> gw(grad->data() + head_w_offset_, spec_.n_classes, last.out_c);
    Eigen::Map<Eigen::VectorXd> gb(grad->data() + head_b_offset_, spec_.n_classes);
    gw.noalias() = dlogits * t.features.transpose();
    gb = dlogits.rowwise().sum();
  }
  Eigen::MatrixXd dfeat = head_weight().transpose() * dlogits;  // D x B
  RowMatrix da(last.out_c, static_cast<Eigen::Index>(t.batch) * out_hw);
  for (int c = 0; c < last.out_c; ++c)
    for (int b = 0; b < t.batch; ++b)
      da.row(c).segment(static_cast<Eigen::Index>(b) * out_hw, out_hw).setConstant(dfeat(c, b) / out_hw);
  if (d_last) *d_last = da;
  if (!grad) return;
  for (size_t i = layout_.size(); i-- > 0;) {
    const auto& l = layout_[i];
    RowMatrix dz = (t.acts[i].array() > 0.0).select(da, 0.0);
    Eigen::Map<RowMatrix> gw(grad->data() + l.w_offset, l.out_c, static_cast<Eigen::Index>(l.in_c) * l.k * l.k);
    Eigen::Map<Eigen::VectorXd> gb(grad->data() + l.b_offset, l.out_c);
    gw.noalias() = dz * t.cols[i].transpose();
    gb = dz.rowwise().sum();
    if (i == 0) break;
    Eigen::Map<const RowMatrix> w(params_.data() + l.w_offset, l.out_c, static_cast<Eigen::Index>(l.in_c) * l.k * l.k);
    RowMatrix dcols = w.transpose() * dz;
    col2im(dcols, t.batch, l.in_c, l.in_h, l.in_w, l.k, l.stride, l.pad, l.out_h, l.out_w, da);
  }
}

Eigen::MatrixXd Classifier::forward_batch(std::span<const Image* const> images) const {
  constexpr size_t kChunk = 128;
  Eigen::MatrixXd out(spec_.n_classes, static_cast<Eigen::Index>(images.size()));
  Trace t;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    size_t n = std::min(kChunk, images.size() - start);
    run_forward(images.subspan(start, n), t);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = t.logits;
  }
  return out;
}

std::vector<double> Classifier::forward(const Image& image) const {
  const Image* one[] = {&image};
  Eigen::MatrixXd l = forward_batch(one);
  return {l.data(), l.data() + l.size()};
}

int argmax(std::span<const double> logits) {
  int best = 0;
  for (size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

int Classifier::predict(const Image& image) const { return argmax(forward(image)); }

std::vector<int> Classifier::predict_batch(std::span<const Image* const> images) const {
  Eigen::MatrixXd l = forward_batch(images);
  std::vector<int> out(images.size());
  for (Eigen::Index b = 0; b < l.cols(); ++b) out[b] = argmax(std::span<const double>(l.col(b).data(), l.rows()));
  return out;
}

Eigen::MatrixXd Classifier::features_batch(std::span<const Image* const> images) const {
  constexpr size_t kChunk = 128;
  Eigen::MatrixXd out(spec_.feature_dim(), static_cast<Eigen::Index>(images.size()));
  Trace t;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    size_t n = std::min(kChunk, images.size() - start);
    run_forward(images.subspan(start, n), t);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = t.features;
  }
  return out;
}

std::vector<double> Classifier::features(const Image& image) const {
  const Image* one[] = {&image};
  Eigen::MatrixXd f = features_batch(one);
  return {f.data(), f.data() + f.size()};
}

ConvProbe Classifier::probe(const Image& image, int target_class) const {
  if (target_class < 0 || target_class >= spec_.n_classes)
    throw InputError("probe class " + std::to_string(target_class) + " out of range");
  const Image* one[] = {&image};
  Trace t;
  run_forward(one, t);
  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(spec_.n_classes, 1);
  dlogits(target_class, 0) = 1.0;
  RowMatrix d_last;
  run_backward(t, dlogits, nullptr, &d_last);
  const auto& last = layout_.back();
  ConvProbe p;
  p.channels = last.out_c;
  p.height = last.out_h;
  p.width = last.out_w;
  p.target_class = target_class;
  p.score = t.logits(target_class, 0);
  p.activations.assign(t.acts.back().data(), t.acts.back().data() + t.acts.back().size());
  p.score_gradient.assign(d_last.data(), d_last.data() + d_last.size());
  return p;
}

std::vector<double> Classifier::logits_from_activations(std::span<const double> activations) const {
  const auto& last = layout_.back();
  const size_t hw = static_cast<size_t>(last.out_h) * last.out_w;
  if (activations.size() != hw * last.out_c) throw InputError("activation array has the wrong size");
  Eigen::VectorXd f(last.out_c);
  for (int c = 0; c < last.out_c; ++c) {
    double s = 0;
    for (size_t p = 0; p < hw; ++p) s += activations[c * hw + p];
    f(c) = s / static_cast<double>(hw);
  }
  Eigen::Map<const Eigen::VectorXd> hb(params_.data() + head_b_offset_, spec_.n_classes);
  Eigen::VectorXd l = head_weight() * f + hb;
  return {l.data(), l.data() + l.size()};
}

double Classifier::loss_and_gradient(std::span<const Image* const> images, std::span<const int> labels,
                                     std::span<const double> weights, std::vector<double>* gradient) const {
  if (labels.size() != images.size() || weights.size() != images.size())
    throw InputError("images, labels and weights must have equal length");
  Trace t;
  run_forward(images, t);
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0.0)) throw InputError("loss weights must sum to a positive value");
  Eigen::MatrixXd dlogits(spec_.n_classes, t.batch);
  double loss = 0.0;
  for (int b = 0; b < t.batch; ++b) {
    if (labels[b] < 0 || labels[b] >= spec_.n_classes) throw InputError("label out of range");
    auto col = t.logits.col(b);
    double m = col.maxCoeff();
    Eigen::VectorXd e = (col.array() - m).exp();
    double z = e.sum();
    loss += weights[b] * (std::log(z) + m - col(labels[b]));
    Eigen::VectorXd p = e / z;
    p(labels[b]) -= 1.0;
    dlogits.col(b) = p * (weights[b] / wsum);
  }
  if (gradient) run_backward(t, dlogits, gradient, nullptr);
  return loss / wsum;
}

Classifier build_classifier(const ArchSpec& spec, std::uint64_t seed) { return Classifier(spec, seed); }

namespace {

constexpr char kMagic[8] = {'S', 'C', 'G', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

json spec_to_json(const ArchSpec& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks) blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}});
  return {{"input_height", s.input_height}, {"input_width", s.input_width}, {"input_channels", s.input_channels},
          {"n_classes", s.n_classes}, {"input_shift", s.input_shift}, {"blocks", blocks}};
}

ArchSpec spec_from_json(const json& j) {
  ArchSpec s;
  s.input_height = j.at("input_height");
  s.input_width = j.at("input_width");
  s.input_channels = j.at("input_channels");
  s.n_classes = j.at("n_classes");
  s.input_shift = j.value("input_shift", 0.0);
  for (const auto& b : j.at("blocks")) s.blocks.push_back({b.at("out_channels"), b.at("kernel"), b.at("stride")});
  return s;
}

}  // namespace

void save_checkpoint(const Classifier& c, const std::filesystem::path& path) {
  json header{{"arch", spec_to_json(c.spec())}, {"seed", c.seed()}, {"provenance", c.provenance()},
              {"parameter_count", c.parameter_count()}};
  std::string h = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write " + tmp.string());
    std::uint64_t hlen = h.size();
    f.write(kMagic, sizeof kMagic);
    f.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    auto p = c.parameters();
    f.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size_bytes()));
    if (!f) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  f.read(magic, sizeof magic);
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (hlen > (1u << 24)) throw CheckpointError(path.string() + ": corrupt header length");
  std::string h(hlen, '\0');
  f.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw CheckpointError(path.string() + ": truncated header");
  json header;
  ArchSpec spec;
  try {
    header = json::parse(h);
    spec = spec_from_json(header.at("arch"));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad header (" + e.what() + ")");
  }
  Classifier c;
  try {
    c = Classifier(spec, header.at("seed").get<std::uint64_t>());
  } catch (const SpecError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  if (header.at("parameter_count").get<size_t>() != c.parameter_count())
    throw CheckpointError(path.string() + ": parameter count does not match architecture");
  c.set_provenance(header.value("provenance", ""));
  auto p = c.parameters();
  f.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size_bytes()));
  if (f.gcount() != static_cast<std::streamsize>(p.size_bytes()))
    throw CheckpointError(path.string() + ": truncated parameter block");
  if (f.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  return c;
}

Classifier load_checkpoint(const std::filesystem::path& path, const ArchSpec& expected) {
  Classifier c = load_checkpoint(path);
  if (!(c.spec() == expected)) throw CheckpointError(path.string() + ": architecture does not match the expected spec");
  return c;
}

}  // namespace scgs
