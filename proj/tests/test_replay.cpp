#include "crawlrl/replay.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace crawlrl;

namespace {

constexpr double kWindow = 0.05;

StepRecord record(int i, bool done = false) {
  StepRecord r;
  r.obs = {0.1 * i, -0.1 * i, 5.0 - 0.01 * i, 4.9};
  r.action = std::vector<double>(6, std::sin(static_cast<double>(i)));
  r.reward = 0.5 * i;
  r.done = done;
  r.t = kWindow * i;
  return r;
}

void push_episode(ReplayBuffer& buf, int length, int first = 0) {
  for (int i = 0; i < length; ++i) buf.push(record(first + i, i == length - 1));
}

}  // namespace

TEST(Replay, PushThenSampleRecoversRecord) {
  ReplayBuffer buf(100);
  buf.push(record(7));
  Rng rng(1);
  const auto seqs = buf.sample_sequences(1, 1, rng);
  ASSERT_EQ(seqs.size(), 1u);
  ASSERT_EQ(seqs[0].size(), 1u);
  EXPECT_EQ(seqs[0][0].obs.vector(), record(7).obs.vector());
  EXPECT_EQ(seqs[0][0].action, record(7).action);
  EXPECT_EQ(seqs[0][0].reward, record(7).reward);
}

TEST(Replay, DoneClosesEpisode) {
  ReplayBuffer buf(100);
  buf.push(record(0));
  EXPECT_TRUE(buf.episode_open());
  buf.push(record(1, true));
  EXPECT_FALSE(buf.episode_open());
  EXPECT_EQ(buf.episodes(), 1u);
  buf.push(record(2));
  EXPECT_EQ(buf.episodes(), 2u);
  EXPECT_EQ(buf.storage().back().size(), 1u);
}

TEST(Replay, EvictsOldestEpisode) {
  ReplayBuffer buf(10);
  for (int e = 0; e < 11; ++e) buf.push(record(e, true));
  EXPECT_EQ(buf.steps(), 10u);
  EXPECT_EQ(buf.episodes(), 10u);
  EXPECT_EQ(buf.storage().front().front().reward, record(1).reward);
}

TEST(Replay, StepCountNeverExceedsCapacity) {
  Rng rng(2);
  std::uniform_int_distribution<int> len(1, 30), cap(5, 60);
  for (int trial = 0; trial < 50; ++trial) {
    ReplayBuffer buf(static_cast<size_t>(cap(rng)));
    for (int e = 0; e < 20; ++e) {
      const int n = len(rng);
      for (int i = 0; i < n; ++i) {
        buf.push(record(i, i == n - 1 && e % 3 != 0));
        ASSERT_LE(buf.steps(), buf.capacity());
        size_t counted = 0;
        for (const auto& ep : buf.storage()) counted += ep.size();
        ASSERT_EQ(counted, buf.steps());
      }
    }
  }
}

TEST(Replay, UniqueSequenceForExactLength) {
  ReplayBuffer buf(100);
  push_episode(buf, 8);
  Rng rng(3);
  for (const auto& s : buf.sample_sequences(5, 8, rng)) {
    for (int i = 0; i < 8; ++i) EXPECT_EQ(s[static_cast<size_t>(i)].t, record(i).t);
  }
}

TEST(Replay, OffsetsAreUniform) {
  const size_t L = 6;
  ReplayBuffer buf(100);
  push_episode(buf, static_cast<int>(L) + 3);
  Rng rng(4);
  const int n = 10000;
  std::vector<int> counts(4, 0);
  for (const auto& s : buf.sample_sequences(n, L, rng)) {
    ++counts[static_cast<size_t>(std::lround(s.front().t / kWindow))];
  }
  double chi2 = 0.0;
  for (int c : counts) {
    EXPECT_NEAR(c / static_cast<double>(n), 0.25, 0.03);
    chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
  }
  EXPECT_LT(chi2, 7.815);  // 95th percentile of chi-square, 3 dof
}

TEST(Replay, UniformAcrossEpisodesOfDifferentLength) {
  ReplayBuffer buf(100);
  push_episode(buf, 4, 0);    // 2 windows of length 3
  push_episode(buf, 7, 100);  // 5 windows
  Rng rng(5);
  const int n = 14000;
  int first = 0;
  for (const auto& s : buf.sample_sequences(n, 3, rng)) first += s.front().t < 50 * kWindow;
  EXPECT_NEAR(first / static_cast<double>(n), 2.0 / 7.0, 0.02);
}

TEST(Replay, SequencesAreContiguousAndWithinEpisodes) {
  ReplayBuffer buf(1000);
  Rng rng(6);
  std::uniform_int_distribution<int> len(3, 40);
  int base = 0;
  for (int e = 0; e < 30; ++e) {
    const int n = len(rng);
    push_episode(buf, n, base);
    base += n + 1000;  // time gap between episodes
  }
  for (const auto& s : buf.sample_sequences(500, 5, rng)) {
    for (size_t i = 1; i < s.size(); ++i) EXPECT_NEAR(s[i].t - s[i - 1].t, kWindow, 1e-9);
    for (size_t i = 0; i + 1 < s.size(); ++i) EXPECT_FALSE(s[i].done);
  }
}

TEST(Replay, FixedSeedGivesIdenticalBatches) {
  ReplayBuffer buf(1000);
  push_episode(buf, 30);
  push_episode(buf, 17, 50);
  Rng a(7), b(7);
  const auto x = buf.sample_sequences(16, 5, a), y = buf.sample_sequences(16, 5, b);
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t j = 0; j < 5; ++j) EXPECT_EQ(x[i][j].t, y[i][j].t);
  }
}

TEST(Replay, InsufficientDataThrows) {
  ReplayBuffer buf(100);
  Rng rng(8);
  EXPECT_THROW(buf.sample_sequences(1, 1, rng), std::runtime_error);
  push_episode(buf, 4);
  EXPECT_FALSE(buf.can_sample(5));
  EXPECT_THROW(buf.sample_sequences(1, 5, rng), std::runtime_error);
  EXPECT_EQ(buf.count_windows(4), 1u);
  EXPECT_EQ(buf.count_windows(2), 3u);
}

TEST(Replay, BatchIsTimeMajor) {
  ReplayBuffer buf(100);
  push_episode(buf, 10);
  Rng rng(9);
  const auto seqs = buf.sample_sequences(3, 4, rng);
  const SequenceBatch batch = to_batch(seqs);
  ASSERT_EQ(batch.length(), 4);
  ASSERT_EQ(batch.batch(), 3);
  for (size_t t = 0; t < 4; ++t) {
    for (Index b = 0; b < 3; ++b) {
      const StepRecord& r = seqs[static_cast<size_t>(b)][t];
      EXPECT_EQ(batch.obs[t].row(b).transpose(), r.obs.vector());
      EXPECT_EQ(batch.actions[t](b, 0), r.action[0]);
      EXPECT_EQ(batch.rewards[t](b, 0), r.reward);
    }
  }
}

TEST(Replay, CsvRoundTrip) {
  ReplayBuffer buf(100);
  push_episode(buf, 5);
  push_episode(buf, 3, 10);
  buf.push(record(20));  // open episode
  const auto path = std::filesystem::temp_directory_path() / "crawlrl_replay.csv";
  buf.save_csv(path);
  const ReplayBuffer back = ReplayBuffer::load_csv(path, 100);
  ASSERT_EQ(back.episodes(), buf.episodes());
  ASSERT_EQ(back.steps(), buf.steps());
  EXPECT_TRUE(back.episode_open());
  for (size_t e = 0; e < buf.episodes(); ++e) {
    for (size_t i = 0; i < buf.storage()[e].size(); ++i) {
      const StepRecord &a = buf.storage()[e][i], &b = back.storage()[e][i];
      EXPECT_EQ(a.obs.vector(), b.obs.vector());
      EXPECT_EQ(a.action, b.action);
      EXPECT_EQ(a.reward, b.reward);
      EXPECT_EQ(a.done, b.done);
      EXPECT_EQ(a.t, b.t);
    }
  }
  std::filesystem::remove(path);
}
