#include "oicr/netcore.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "oicr/check.hpp"
#include "oicr/errors.hpp"
#include "oicr/io_util.hpp"
#include "oicr/rng.hpp"

namespace oicr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

constexpr char kCheckpointMagic[8] = {'O', 'I', 'C', 'R', 'C', 'K', 'P', 'T'};
constexpr uint8_t kCheckpointVersion = 1;
constexpr double kInitStd = 0.01;

DenseLayer make_layer(int out, int in, Rng& rng) {
  DenseLayer l;
  l.w = Mat(out, in);
  for (double& v : l.w.a) v = rng.normal(0.0, kInitStd);
  l.b.assign(out, 0.0);
  l.vw = Mat(out, in);
  l.vb.assign(out, 0.0);
  return l;
}

void sgd_layer(DenseLayer& l, const DenseGrads& g, double lr, double momentum, double wd) {
  OICR_CHECK(l.w.same_shape(g.gw) && l.b.size() == g.gb.size(), "sgd shape");
  for (size_t i = 0; i < l.w.a.size(); ++i) {
    l.vw.a[i] = momentum * l.vw.a[i] + g.gw.a[i] + wd * l.w.a[i];
    l.w.a[i] -= lr * l.vw.a[i];
  }
  for (size_t i = 0; i < l.b.size(); ++i) {
    l.vb[i] = momentum * l.vb[i] + g.gb[i] + wd * l.b[i];
    l.b[i] -= lr * l.vb[i];
  }
}

void append_u32(std::string& out, uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void append_tensor(std::string& out, const std::vector<double>& vals) {
  size_t off = out.size();
  out.resize(off + vals.size() * sizeof(float));
  float* dst = reinterpret_cast<float*>(out.data() + off);
  for (size_t i = 0; i < vals.size(); ++i) dst[i] = static_cast<float>(vals[i]);
}

void append_layer(std::string& out, const DenseLayer& l) {
  append_tensor(out, l.w.a);
  append_tensor(out, l.b);
}

uint32_t crc32_of(const char* data, size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t pos = 0;
  while (pos < len) {
    uInt chunk = static_cast<uInt>(std::min<size_t>(len - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + pos), chunk);
    pos += chunk;
  }
  return static_cast<uint32_t>(crc);
}

class CheckpointReader {
 public:
  CheckpointReader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  void read_raw(void* dst, size_t n) {
    if (pos_ + n > bytes_.size())
      throw FileError(FileErrorKind::truncated, path_, bytes_.size(),
                      "need " + std::to_string(pos_ + n) + " bytes");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  uint32_t read_u32() {
    uint32_t v = 0;
    read_raw(&v, sizeof(v));
    return v;
  }

  void read_layer(DenseLayer& l, int out, int in) {
    l.w = Mat(out, in);
    std::vector<float> buf(static_cast<size_t>(out) * in);
    read_raw(buf.data(), buf.size() * sizeof(float));
    for (size_t i = 0; i < buf.size(); ++i) l.w.a[i] = buf[i];
    buf.assign(out, 0.0f);
    read_raw(buf.data(), buf.size() * sizeof(float));
    l.b.assign(out, 0.0);
    for (int i = 0; i < out; ++i) l.b[i] = buf[i];
    l.vw = Mat(out, in);
    l.vb.assign(out, 0.0);
  }

  size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

ModelParams init_model(const ModelDims& dims, uint64_t seed) {
  OICR_CHECK(dims.feature_dim > 0 && dims.hidden_dim > 0 && dims.num_classes >= 2 &&
                 dims.num_refine >= 0,
             "model dims");
  Rng rng(seed);
  ModelParams p;
  p.dims = dims;
  p.trunk1 = make_layer(dims.hidden_dim, dims.feature_dim, rng);
  p.trunk2 = make_layer(dims.hidden_dim, dims.hidden_dim, rng);
  p.stream_c = make_layer(dims.num_classes, dims.hidden_dim, rng);
  p.stream_d = make_layer(dims.num_classes, dims.hidden_dim, rng);
  for (int k = 0; k < dims.num_refine; ++k)
    p.refine.push_back(make_layer(dims.num_classes + 1, dims.hidden_dim, rng));
  return p;
}

ModelGrads zero_grads(const ModelDims& dims) {
  auto zero = [](int out, int in) {
    DenseGrads g;
    g.gw = Mat(out, in);
    g.gb.assign(out, 0.0);
    return g;
  };
  ModelGrads g;
  g.trunk1 = zero(dims.hidden_dim, dims.feature_dim);
  g.trunk2 = zero(dims.hidden_dim, dims.hidden_dim);
  g.stream_c = zero(dims.num_classes, dims.hidden_dim);
  g.stream_d = zero(dims.num_classes, dims.hidden_dim);
  for (int k = 0; k < dims.num_refine; ++k)
    g.refine.push_back(zero(dims.num_classes + 1, dims.hidden_dim));
  return g;
}

void accumulate_grads(ModelGrads& into, const ModelGrads& g) {
  auto acc = [](DenseGrads& a, const DenseGrads& b) {
    add_inplace(a.gw, b.gw);
    for (size_t i = 0; i < a.gb.size(); ++i) a.gb[i] += b.gb[i];
  };
  acc(into.trunk1, g.trunk1);
  acc(into.trunk2, g.trunk2);
  acc(into.stream_c, g.stream_c);
  acc(into.stream_d, g.stream_d);
  OICR_CHECK(into.refine.size() == g.refine.size(), "grad refine count");
  for (size_t k = 0; k < g.refine.size(); ++k) acc(into.refine[k], g.refine[k]);
}

void scale_grads(ModelGrads& g, double s) {
  auto scale = [s](DenseGrads& a) {
    for (double& v : a.gw.a) v *= s;
    for (double& v : a.gb) v *= s;
  };
  scale(g.trunk1);
  scale(g.trunk2);
  scale(g.stream_c);
  scale(g.stream_d);
  for (DenseGrads& r : g.refine) scale(r);
}

Mat dense_apply(const DenseLayer& layer, const Mat& input) {
  OICR_CHECK(layer.w.cols == input.rows, "dense_apply shape");
  Mat out = matmul(layer.w, input);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out(i, j) += layer.b[i];
  return out;
}

Mat dense_grad(const DenseLayer& layer, const Mat& input, const Mat& upstream, DenseGrads& grads) {
  OICR_CHECK(upstream.rows == layer.w.rows && upstream.cols == input.cols, "dense_grad shape");
  grads.gw = matmul_nt(upstream, input);
  grads.gb.assign(layer.b.size(), 0.0);
  for (int i = 0; i < upstream.rows; ++i)
    for (int j = 0; j < upstream.cols; ++j) grads.gb[i] += upstream(i, j);
  return matmul_tn(layer.w, upstream);
}

Mat relu(const Mat& x) {
  Mat out(x.rows, x.cols);
  for (size_t i = 0; i < x.a.size(); ++i) out.a[i] = x.a[i] > 0.0 ? x.a[i] : 0.0;
  return out;
}

Mat relu_backward(const Mat& pre, const Mat& upstream) {
  OICR_CHECK(pre.same_shape(upstream), "relu_backward shape");
  Mat out(pre.rows, pre.cols);
  for (size_t i = 0; i < pre.a.size(); ++i) out.a[i] = pre.a[i] > 0.0 ? upstream.a[i] : 0.0;
  return out;
}

Mat softmax_columns(const Mat& x) {
  Mat out(x.rows, x.cols);
  for (int j = 0; j < x.cols; ++j) {
    double mx = x(0, j);
    for (int i = 1; i < x.rows; ++i) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (int i = 0; i < x.rows; ++i) {
      double e = std::exp(x(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (int i = 0; i < x.rows; ++i) out(i, j) /= sum;
  }
  return out;
}

Mat softmax_rows(const Mat& x) {
  Mat out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    double mx = x(i, 0);
    for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      double e = std::exp(x(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < x.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

Mat softmax_columns_backward(const Mat& soft, const Mat& upstream) {
  OICR_CHECK(soft.same_shape(upstream), "softmax backward shape");
  Mat out(soft.rows, soft.cols);
  for (int j = 0; j < soft.cols; ++j) {
    double dot = 0.0;
    for (int i = 0; i < soft.rows; ++i) dot += upstream(i, j) * soft(i, j);
    for (int i = 0; i < soft.rows; ++i) out(i, j) = soft(i, j) * (upstream(i, j) - dot);
  }
  return out;
}

Mat softmax_rows_backward(const Mat& soft, const Mat& upstream) {
  OICR_CHECK(soft.same_shape(upstream), "softmax backward shape");
  Mat out(soft.rows, soft.cols);
  for (int i = 0; i < soft.rows; ++i) {
    double dot = 0.0;
    for (int j = 0; j < soft.cols; ++j) dot += upstream(i, j) * soft(i, j);
    for (int j = 0; j < soft.cols; ++j) out(i, j) = soft(i, j) * (upstream(i, j) - dot);
  }
  return out;
}

OptimConfig default_optim(int total_iterations, double base_lr) {
  OptimConfig cfg;
  cfg.total_iterations = total_iterations;
  int first = total_iterations * 4 / 7;
  cfg.learning_rate_schedule = {{first, base_lr}, {total_iterations - first, base_lr * 0.1}};
  return cfg;
}

double lr_at(const OptimConfig& cfg, int iteration) {
  OICR_CHECK(iteration >= 1, "iteration is 1-based");
  int covered = 0;
  for (const auto& [count, lr] : cfg.learning_rate_schedule) {
    covered += count;
    if (iteration <= covered) return lr;
  }
  OICR_CHECK(!cfg.learning_rate_schedule.empty(), "empty lr schedule");
  return cfg.learning_rate_schedule.back().second;
}

void sgd_update(ModelParams& params, const ModelGrads& grads, double lr, double momentum,
                double weight_decay) {
  sgd_layer(params.trunk1, grads.trunk1, lr, momentum, weight_decay);
  sgd_layer(params.trunk2, grads.trunk2, lr, momentum, weight_decay);
  sgd_layer(params.stream_c, grads.stream_c, lr, momentum, weight_decay);
  sgd_layer(params.stream_d, grads.stream_d, lr, momentum, weight_decay);
  OICR_CHECK(params.refine.size() == grads.refine.size(), "sgd refine count");
  for (size_t k = 0; k < params.refine.size(); ++k)
    sgd_layer(params.refine[k], grads.refine[k], lr, momentum, weight_decay);
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::string bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  bytes.push_back(static_cast<char>(kCheckpointVersion));
  append_u32(bytes, static_cast<uint32_t>(params.dims.feature_dim));
  append_u32(bytes, static_cast<uint32_t>(params.dims.hidden_dim));
  append_u32(bytes, static_cast<uint32_t>(params.dims.num_classes));
  append_u32(bytes, static_cast<uint32_t>(params.dims.num_refine));
  append_layer(bytes, params.trunk1);
  append_layer(bytes, params.trunk2);
  append_layer(bytes, params.stream_c);
  append_layer(bytes, params.stream_d);
  for (const DenseLayer& l : params.refine) append_layer(bytes, l);
  append_u32(bytes, crc32_of(bytes.data(), bytes.size()));
  write_file_atomic(path, bytes);
}

ModelParams load_checkpoint(const std::string& path) {
  std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kCheckpointMagic) + 1 + 4 * sizeof(uint32_t) + sizeof(uint32_t))
    throw FileError(FileErrorKind::truncated, path, bytes.size(), "file shorter than header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw FileError(FileErrorKind::format, path, 0, "bad magic");

  uint32_t declared_crc = 0;
  std::memcpy(&declared_crc, bytes.data() + bytes.size() - sizeof(uint32_t), sizeof(uint32_t));
  uint32_t actual_crc = crc32_of(bytes.data(), bytes.size() - sizeof(uint32_t));
  if (declared_crc != actual_crc)
    throw FileError(FileErrorKind::checksum, path, bytes.size() - sizeof(uint32_t),
                    "crc32 mismatch");

  CheckpointReader r(bytes, path);
  char magic[sizeof(kCheckpointMagic)];
  r.read_raw(magic, sizeof(magic));
  uint8_t version = 0;
  r.read_raw(&version, 1);
  if (version != kCheckpointVersion)
    throw FileError(FileErrorKind::version, path, sizeof(kCheckpointMagic),
                    "expected version 1, found " + std::to_string(version));

  ModelParams p;
  p.dims.feature_dim = static_cast<int>(r.read_u32());
  p.dims.hidden_dim = static_cast<int>(r.read_u32());
  p.dims.num_classes = static_cast<int>(r.read_u32());
  p.dims.num_refine = static_cast<int>(r.read_u32());
  if (p.dims.feature_dim <= 0 || p.dims.hidden_dim <= 0 || p.dims.num_classes < 2 ||
      p.dims.num_refine < 0)
    throw FileError(FileErrorKind::format, path, sizeof(kCheckpointMagic) + 1,
                    "dimension header out of range");

  r.read_layer(p.trunk1, p.dims.hidden_dim, p.dims.feature_dim);
  r.read_layer(p.trunk2, p.dims.hidden_dim, p.dims.hidden_dim);
  r.read_layer(p.stream_c, p.dims.num_classes, p.dims.hidden_dim);
  r.read_layer(p.stream_d, p.dims.num_classes, p.dims.hidden_dim);
  p.refine.resize(p.dims.num_refine);
  for (int k = 0; k < p.dims.num_refine; ++k)
    r.read_layer(p.refine[k], p.dims.num_classes + 1, p.dims.hidden_dim);

  if (r.pos() + sizeof(uint32_t) != bytes.size())
    throw FileError(FileErrorKind::format, path, r.pos(), "unexpected trailing bytes");
  return p;
}

}  // namespace oicr
