#include "crawlrl/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace crawlrl {

Tensor& ParamSet::add(const std::string& name, Matrix init) {
  if (contains(name)) throw std::invalid_argument("params: duplicate parameter name '" + name + "'");
  const Index rows = init.rows();
  const Index cols = init.cols();
  index_[name] = entries_.size();
  entries_.emplace_back(name, Tensor(std::move(init), true));
  slots_.push_back({Matrix::Zero(rows, cols), Matrix::Zero(rows, cols)});
  return entries_.back().second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("params: no parameter named '" + name + "'");
  return entries_[it->second].second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("params: no parameter named '" + name + "'");
  return entries_[it->second].second;
}

Index ParamSet::numel() const {
  Index n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, t] : entries_) {
    if (t.has_grad()) sq += t.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

double ParamSet::adam_step(double lr, const AdamOptions& opts) {
  for (const auto& [name, t] : entries_) {
    if (t.has_grad() && !t.grad().allFinite()) {
      throw NumericError("adam: non-finite gradient in parameter '" + name + "'");
    }
  }
  const double norm = grad_norm();
  const double scale = (opts.clip_norm > 0.0 && norm > opts.clip_norm) ? opts.clip_norm / norm : 1.0;

  ++step_;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < entries_.size(); ++i) {
    Tensor& t = entries_[i].second;
    Slots& s = slots_[i];
    const Matrix g = t.has_grad() ? Matrix(t.grad() * scale) : Matrix::Zero(t.rows(), t.cols());
    s.m = opts.beta1 * s.m + (1.0 - opts.beta1) * g;
    s.v = opts.beta2 * s.v + (1.0 - opts.beta2) * g.cwiseAbs2();
    t.data().array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + opts.epsilon);
    t.zero_grad();
  }
  return norm;
}

void ParamSet::copy_from(const ParamSet& other) {
  if (other.size() != size()) throw std::invalid_argument("params: parameter counts differ");
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& [name, src] = other.entries_[i];
    Tensor& dst = at(name);
    if (dst.rows() != src.rows() || dst.cols() != src.cols()) {
      throw ShapeError("params: shape mismatch for '" + name + "'");
    }
    dst.data() = src.value();
    slots_[index_.at(name)] = other.slots_[i];
  }
  step_ = other.step_;
}

void Checkpoint::put(const std::string& name, Matrix value) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(value);
    return;
  }
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
}

const Matrix& Checkpoint::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError("checkpoint: missing entry '" + name + "'");
  return entries_[it->second].second;
}

void Checkpoint::put_params(const std::string& section, const ParamSet& params, bool with_optimizer) {
  for (size_t i = 0; i < params.entries_.size(); ++i) {
    const auto& [name, t] = params.entries_[i];
    put(section + "/" + name, t.value());
    if (with_optimizer) {
      put(section + "/" + name + "#m", params.slots_[i].m);
      put(section + "/" + name + "#v", params.slots_[i].v);
    }
  }
  if (with_optimizer) put(section + "/#step", Matrix::Constant(1, 1, static_cast<double>(params.step_)));
}

void Checkpoint::get_params(const std::string& section, ParamSet& params) const {
  for (size_t i = 0; i < params.entries_.size(); ++i) {
    auto& [name, t] = params.entries_[i];
    const Matrix& v = get(section + "/" + name);
    if (v.rows() != t.rows() || v.cols() != t.cols()) {
      throw CheckpointError("checkpoint: shape mismatch for '" + section + "/" + name + "'");
    }
    t.data() = v;
    if (contains(section + "/" + name + "#m")) {
      params.slots_[i].m = get(section + "/" + name + "#m");
      params.slots_[i].v = get(section + "/" + name + "#v");
    }
  }
  if (contains(section + "/#step")) params.step_ = static_cast<int64_t>(get(section + "/#step")(0, 0));
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, uint64_t limit) {
  const auto n = read_pod<uint64_t>(is);
  if (n > limit) throw CheckpointError("checkpoint: corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("checkpoint: truncated file");
  return s;
}

}  // namespace

void Checkpoint::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, kVersion);
  write_string(os, metadata);
  write_pod<uint64_t>(os, entries_.size());
  for (const auto& [name, m] : entries_) {
    write_string(os, name);
    write_pod<uint32_t>(os, 2);
    write_pod<uint64_t>(os, static_cast<uint64_t>(m.rows()));
    write_pod<uint64_t>(os, static_cast<uint64_t>(m.cols()));
  }
  for (const auto& [name, m] : entries_) {
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: bad magic in '" + path.string() + "'");
  }
  const auto version = read_pod<uint32_t>(is);
  if (version != kVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.metadata = read_string(is, 1u << 26);
  const auto count = read_pod<uint64_t>(is);
  if (count > (1u << 24)) throw CheckpointError("checkpoint: corrupt entry count");
  std::vector<std::pair<std::string, std::vector<uint64_t>>> table;
  table.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(is, 4096);
    const auto rank = read_pod<uint32_t>(is);
    if (rank == 0 || rank > 2) throw CheckpointError("checkpoint: unsupported rank for '" + name + "'");
    std::vector<uint64_t> extents(rank);
    for (auto& e : extents) {
      e = read_pod<uint64_t>(is);
      if (e == 0 || e > (1u << 28)) throw CheckpointError("checkpoint: corrupt extent for '" + name + "'");
    }
    table.emplace_back(std::move(name), std::move(extents));
  }
  for (auto& [name, extents] : table) {
    const Index rows = extents.size() == 2 ? static_cast<Index>(extents[0]) : 1;
    const Index cols = extents.size() == 2 ? static_cast<Index>(extents[1]) : static_cast<Index>(extents[0]);
    Matrix m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint: truncated payload for '" + name + "'");
    ck.put(name, std::move(m));
  }
  return ck;
}

}  // namespace crawlrl
