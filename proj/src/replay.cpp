#include "crawlrl/replay.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace crawlrl {

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay: capacity must be positive");
}

void ReplayBuffer::push(StepRecord record) {
  if (!open_) {
    episodes_.emplace_back();
    open_ = true;
  }
  const bool done = record.done;
  episodes_.back().push_back(std::move(record));
  ++steps_;
  if (done) open_ = false;
  evict();
}

void ReplayBuffer::evict() {
  while (steps_ > capacity_) {
    if (episodes_.size() > 1) {
      steps_ -= episodes_.front().size();
      episodes_.pop_front();
    } else {
      episodes_.front().erase(episodes_.front().begin());
      --steps_;
    }
  }
}

size_t ReplayBuffer::count_windows(size_t length) const {
  if (length == 0) return 0;
  size_t n = 0;
  for (const auto& ep : episodes_) {
    if (ep.size() >= length) n += ep.size() - length + 1;
  }
  return n;
}

std::vector<Sequence> ReplayBuffer::sample_sequences(size_t batch, size_t length, Rng& rng) const {
  const size_t total = count_windows(length);
  if (total == 0) {
    throw std::runtime_error("replay: no episode holds " + std::to_string(length) + " consecutive records (" +
                             std::to_string(steps_) + " stored)");
  }
  std::uniform_int_distribution<size_t> pick(0, total - 1);
  std::vector<Sequence> out;
  out.reserve(batch);
  for (size_t i = 0; i < batch; ++i) {
    size_t k = pick(rng);
    for (const auto& ep : episodes_) {
      if (ep.size() < length) continue;
      const size_t n = ep.size() - length + 1;
      if (k < n) {
        out.emplace_back(ep.begin() + static_cast<std::ptrdiff_t>(k),
                         ep.begin() + static_cast<std::ptrdiff_t>(k + length));
        break;
      }
      k -= n;
    }
  }
  return out;
}

void ReplayBuffer::save_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("replay: cannot open '" + path.string() + "' for writing");
  const size_t dim = steps_ == 0 ? 0 : episodes_.front().front().action.size();
  os << "episode,t,alpha1,alpha2,X1,X2,reward,done";
  for (size_t j = 0; j < dim; ++j) os << ",a" << j;
  os << '\n' << std::setprecision(17);
  size_t e = 0;
  for (const auto& ep : episodes_) {
    for (const auto& r : ep) {
      os << e << ',' << r.t << ',' << r.obs.alpha1 << ',' << r.obs.alpha2 << ',' << r.obs.X1 << ',' << r.obs.X2 << ','
         << r.reward << ',' << (r.done ? 1 : 0);
      for (double a : r.action) os << ',' << a;
      os << '\n';
    }
    ++e;
  }
}

ReplayBuffer ReplayBuffer::load_csv(const std::filesystem::path& path, size_t capacity) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("replay: cannot open '" + path.string() + "'");
  std::string line;
  std::getline(is, line);
  if (line.rfind("episode,t,alpha1,alpha2,X1,X2,reward,done", 0) != 0) {
    throw std::runtime_error("replay: unexpected header in '" + path.string() + "'");
  }
  ReplayBuffer buf(capacity);
  long prev_episode = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() < 8) throw std::runtime_error("replay: malformed row in '" + path.string() + "'");
    const long episode = static_cast<long>(v[0]);
    if (episode != prev_episode && buf.open_) buf.open_ = false;
    prev_episode = episode;
    StepRecord r;
    r.t = v[1];
    r.obs = {v[2], v[3], v[4], v[5]};
    r.reward = v[6];
    r.done = v[7] != 0.0;
    r.action.assign(v.begin() + 8, v.end());
    buf.push(std::move(r));
  }
  return buf;
}

SequenceBatch to_batch(const std::vector<Sequence>& sequences) {
  if (sequences.empty()) throw std::invalid_argument("to_batch: no sequences");
  const size_t L = sequences.front().size();
  const Index B = static_cast<Index>(sequences.size());
  const Index A = static_cast<Index>(sequences.front().front().action.size());
  SequenceBatch batch;
  for (size_t t = 0; t < L; ++t) {
    Matrix obs(B, 4);
    Matrix act(B, A);
    Matrix rew(B, 1);
    for (Index b = 0; b < B; ++b) {
      const Sequence& seq = sequences[static_cast<size_t>(b)];
      if (seq.size() != L) throw ShapeError("to_batch: sequences differ in length");
      const StepRecord& r = seq[t];
      if (static_cast<Index>(r.action.size()) != A) throw ShapeError("to_batch: action sizes differ");
      obs.row(b) << r.obs.alpha1, r.obs.alpha2, r.obs.X1, r.obs.X2;
      for (Index j = 0; j < A; ++j) act(b, j) = r.action[static_cast<size_t>(j)];
      rew(b, 0) = r.reward;
    }
    batch.obs.push_back(std::move(obs));
    batch.actions.push_back(std::move(act));
    batch.rewards.push_back(std::move(rew));
  }
  return batch;
}

}  // namespace crawlrl
