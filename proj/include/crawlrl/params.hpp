#pragma once

#include "crawlrl/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace crawlrl {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 100.0;  // global gradient norm; <= 0 disables
};

/// Named trainable tensors plus Adam moment slots. Insertion order is the
/// iteration order, which keeps checkpoints and updates deterministic.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Matrix init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  size_t size() const { return entries_.size(); }
  Index numel() const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void zero_grad();
  double grad_norm() const;

  /// One Adam update. Clips the global gradient norm first, then zeroes all
  /// gradients. Throws NumericError naming the first non-finite gradient.
  /// Returns the pre-clip gradient norm.
  double adam_step(double lr, const AdamOptions& opts = {});

  int64_t step_count() const { return step_; }

  /// Copies parameter values (and optimizer state) from another set with the
  /// same names and shapes.
  void copy_from(const ParamSet& other);

  struct Slots {
    Matrix m;
    Matrix v;
  };
  const Slots& slots(const std::string& name) const { return slots_.at(index_.at(name)); }

 private:
  friend class Checkpoint;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::vector<Slots> slots_;
  std::map<std::string, size_t> index_;
  int64_t step_ = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Versioned binary checkpoint: magic, version, a free-form metadata block,
/// then the table of (name, shape) records, then every payload as
/// little-endian float64 in table order.
class Checkpoint {
 public:
  static constexpr char kMagic[8] = {'C', 'R', 'W', 'L', 'C', 'K', 'P', 'T'};
  static constexpr uint32_t kVersion = 1;

  std::string metadata;

  void put(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Matrix& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Matrix>>& entries() const { return entries_; }

  /// Stores every parameter as "<section>/<name>", and the Adam slots as
  /// "<section>/<name>#m", "#v" plus "<section>/#step".
  void put_params(const std::string& section, const ParamSet& params, bool with_optimizer = true);
  /// Restores values (and optimizer state when present). Shapes must match.
  void get_params(const std::string& section, ParamSet& params) const;

  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
  std::map<std::string, size_t> index_;
};

}  // namespace crawlrl
