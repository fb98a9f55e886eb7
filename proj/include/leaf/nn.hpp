#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "leaf/rng.hpp"
#include "leaf/tensor.hpp"

namespace leaf {

/// Affine map. Weights are Glorot-uniform in +/- sqrt(6/(fan_in+fan_out)),
/// bias starts at zero; both require grad.
struct LinearLayer {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  static LinearLayer init(int fan_in, int fan_out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  int in_dim() const { return weight.rows(); }
  int out_dim() const { return weight.cols(); }
};

/// Linear stack with relu between layers (not after the last). An empty
/// stack is the identity map.
struct MlpEncoder {
  std::vector<LinearLayer> layers;
  int input_dim = 0;
  int output_dim = 0;

  /// widths lists every layer's output size in order; empty means identity.
  static MlpEncoder init(int input_dim, const std::vector<int>& widths, Rng& rng);

  Tensor forward(const Tensor& x) const;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list. step() validates
/// every gradient before mutating any parameter, so a non-finite gradient
/// aborts the whole step.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

/// Mean cross-entropy over rows. Takes raw logits and applies log-softmax
/// internally. labels[i] must lie in [0, logits.cols()).
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);

/// Versioned flat file of named parameter arrays (name, shape, float64
/// payload). Round-trips bit-exactly.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);

/// Loads values into the given tensors. Names, order, and shapes must match
/// the file exactly.
void load_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>>& params);

struct CheckpointEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
};

/// Walks a checkpoint without knowing its parameter list; throws on any
/// structural damage.
std::vector<CheckpointEntry> read_checkpoint_index(const std::string& path);

}  // namespace leaf
