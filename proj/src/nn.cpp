#include "leaf/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace leaf {

// ---- layers ----------------------------------------------------------------

LinearLayer LinearLayer::init(int fan_in, int fan_out, Rng& rng) {
  if (fan_in < 1 || fan_out < 1) {
    throw std::invalid_argument("LinearLayer::init: dims must be >= 1");
  }
  LinearLayer l;
  l.weight = Tensor(fan_in, fan_out);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& w : l.weight.values()) w = rng.uniform(-bound, bound);
  l.bias = Tensor(1, fan_out, 0.0);
  l.weight.set_requires_grad(true);
  l.bias.set_requires_grad(true);
  return l;
}

Tensor LinearLayer::forward(const Tensor& x) const {
  return add(matmul(x, weight), bias);
}

MlpEncoder MlpEncoder::init(int input_dim, const std::vector<int>& widths, Rng& rng) {
  MlpEncoder enc;
  enc.input_dim = input_dim;
  int in = input_dim;
  for (int w : widths) {
    enc.layers.push_back(LinearLayer::init(in, w, rng));
    in = w;
  }
  enc.output_dim = in;
  return enc;
}

Tensor MlpEncoder::forward(const Tensor& x) const {
  if (x.cols() != input_dim) {
    throw std::invalid_argument("MlpEncoder::forward: input width " + std::to_string(x.cols()) +
                                " != " + std::to_string(input_dim));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

// ---- Adam ------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg) {
  for (auto& p : params) {
    if (!p.requires_grad()) {
      throw std::invalid_argument("AdamOptimizer: parameter does not require grad");
    }
    Slot s;
    s.param = p;
    s.m.assign(static_cast<std::size_t>(p.size()), 0.0);
    s.v.assign(static_cast<std::size_t>(p.size()), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamOptimizer::step() {
  // validate first: a bad gradient must not leave a half-updated model
  for (std::size_t si = 0; si < slots_.size(); ++si) {
    const auto g = slots_[si].param.grad();
    for (int i = 0; i < slots_[si].param.size(); ++i) {
      if (!std::isfinite(g[i])) {
        std::ostringstream os;
        os << "adam: non-finite gradient in parameter " << si << " at index " << i << " (step "
           << t_ + 1 << ")";
        throw NumericError(os.str());
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    const auto g = s.param.grad();
    auto w = s.param.values();
    for (int i = 0; i < s.param.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

// ---- cross entropy ---------------------------------------------------------

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  const int rows = logits.rows(), cols = logits.cols();
  if (rows < 1 || cols < 1) throw std::invalid_argument("cross_entropy_mean: empty logits");
  if (static_cast<int>(labels.size()) != rows) {
    throw std::invalid_argument("cross_entropy_mean: label count " +
                                std::to_string(labels.size()) + " != rows " +
                                std::to_string(rows));
  }
  for (int l : labels) {
    if (l < 0 || l >= cols) throw std::invalid_argument("cross_entropy_mean: label out of range");
  }

  Tensor out(1, 1);
  const auto x = logits.values();
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    double m = x[off];
    for (int c = 1; c < cols; ++c) m = std::max(m, x[off + c]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += std::exp(x[off + c] - m);
    total += m + std::log(s) - x[off + labels[r]];
  }
  out.values()[0] = total / rows;
  check_finite(out, "cross_entropy_mean");

  if (Tape::active() != nullptr && logits.requires_grad()) {
    Tensor px = logits, po = out;
    auto lab = std::make_shared<std::vector<int>>(labels);
    Tape::active()->record(out, {logits}, [px, po, lab]() mutable {
      const double g = po.grad()[0] / px.rows();
      const auto x = px.values();
      auto gx = px.grad();
      const int rows = px.rows(), cols = px.cols();
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        double m = x[off];
        for (int c = 1; c < cols; ++c) m = std::max(m, x[off + c]);
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += std::exp(x[off + c] - m);
        for (int c = 0; c < cols; ++c) {
          const double p = std::exp(x[off + c] - m) / s;
          gx[off + c] += g * (p - (c == (*lab)[r] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'E', 'A', 'F', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(b, 8);
}

double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.rows()));
    write_u32(os, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.values()) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  const std::uint32_t count = read_u32(is);
  if (count != params.size()) {
    throw std::runtime_error("load_checkpoint: expected " + std::to_string(params.size()) +
                             " arrays, file has " + std::to_string(count));
  }
  for (auto& [name, t] : params) {
    const std::uint32_t name_len = read_u32(is);
    std::string file_name(name_len, '\0');
    is.read(file_name.data(), name_len);
    const std::uint32_t rows = read_u32(is);
    const std::uint32_t cols = read_u32(is);
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
    if (file_name != name || rows != static_cast<std::uint32_t>(t.rows()) ||
        cols != static_cast<std::uint32_t>(t.cols())) {
      throw std::runtime_error("load_checkpoint: mismatch for '" + name + "' (file has '" +
                               file_name + "' " + std::to_string(rows) + "x" +
                               std::to_string(cols) + ")");
    }
    for (auto& v : t.values()) v = read_f64(is);
    if (!is) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
  }
}

std::vector<CheckpointEntry> read_checkpoint_index(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_checkpoint_index: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("read_checkpoint_index: bad magic in " + path);
  }
  const std::uint32_t count = read_u32(is);
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t name_len = read_u32(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    e.rows = static_cast<int>(read_u32(is));
    e.cols = static_cast<int>(read_u32(is));
    if (!is || e.rows < 0 || e.cols < 0) {
      throw std::runtime_error("read_checkpoint_index: truncated entry in " + path);
    }
    for (std::int64_t j = 0; j < static_cast<std::int64_t>(e.rows) * e.cols; ++j) {
      const double v = read_f64(is);
      if (!is || !std::isfinite(v)) {
        throw std::runtime_error("read_checkpoint_index: bad payload in " + path);
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace leaf
