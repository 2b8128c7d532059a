#include "oracles.hpp"

#include "strf/reid_eval.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace strf;

TEST(Evaluate, PerfectRetrieval) {
  Eigen::MatrixXd d(3, 3);
  d << 0.1, 0.9, 0.8,  //
      0.7, 0.2, 0.9,   //
      0.9, 0.8, 0.3;
  const std::vector<int> ids{1, 2, 3}, qcam{0, 0, 0}, gcam{1, 1, 1};
  const auto r = evaluate(d, ids, qcam, ids, gcam);
  EXPECT_DOUBLE_EQ(r.mean_ap, 1.0);
  EXPECT_DOUBLE_EQ(r.rank(1), 1.0);
}

TEST(Evaluate, SecondOfTwoHasHalfPrecision) {
  Eigen::MatrixXd d(1, 2);
  d << 0.2, 0.5;
  const std::vector<int> qid{7}, qcam{0}, gid{3, 7}, gcam{1, 1};
  const auto r = evaluate(d, qid, qcam, gid, gcam);
  ASSERT_EQ(r.ap.size(), 1u);
  EXPECT_DOUBLE_EQ(r.ap[0], 0.5);
  EXPECT_DOUBLE_EQ(r.rank(1), 0.0);
  EXPECT_DOUBLE_EQ(r.rank(2), 1.0);
}

TEST(Evaluate, ExcludesSameIdentitySameCamera) {
  // Query 0 would match at rank 1 through a same-camera copy; query 1's
  // only match is same-camera, so it is skipped; query 2 is clean.
  Eigen::MatrixXd d(3, 4);
  d << 0.0, 0.3, 0.1, 0.9,  //
      0.5, 0.0, 0.6, 0.7,   //
      0.4, 0.8, 0.6, 0.1;
  const std::vector<int> qid{1, 2, 3}, qcam{0, 0, 1};
  const std::vector<int> gid{1, 2, 1, 3}, gcam{0, 0, 1, 0};
  const auto r = evaluate(d, qid, qcam, gid, gcam);
  EXPECT_EQ(r.skipped, 1u);
  ASSERT_EQ(r.queries, (std::vector<std::size_t>{0, 2}));
  // Query 0 after exclusion: gallery 2 (0.1, match) first.
  EXPECT_DOUBLE_EQ(r.ap[0], 1.0);
  EXPECT_DOUBLE_EQ(r.ap[1], 1.0);
  EXPECT_DOUBLE_EQ(r.rank(1), 1.0);
}

TEST(Evaluate, ExclusionChangesRank) {
  Eigen::MatrixXd d(1, 3);
  d << 0.0, 0.2, 0.4;
  const std::vector<int> qid{5}, qcam{2}, gid{5, 9, 5}, gcam{2, 0, 1};
  const auto r = evaluate(d, qid, qcam, gid, gcam);
  EXPECT_DOUBLE_EQ(r.ap[0], 0.5);
  EXPECT_DOUBLE_EQ(r.rank(1), 0.0);
}

TEST(Evaluate, TiesResolveByGalleryIndex) {
  Eigen::MatrixXd d(1, 2);
  d << 0.5, 0.5;
  const std::vector<int> qid{1}, qcam{0}, gid{2, 1}, gcam{1, 1};
  EXPECT_DOUBLE_EQ(evaluate(d, qid, qcam, gid, gcam).ap[0], 0.5);
}

TEST(Evaluate, NoValidMatchIsAnError) {
  Eigen::MatrixXd d(1, 1);
  d << 0.1;
  const std::vector<int> qid{1}, qcam{0}, gid{1}, gcam{0};
  EXPECT_THROW(evaluate(d, qid, qcam, gid, gcam), EvaluationError);
}

TEST(Evaluate, RejectsLabelLengthMismatch) {
  Eigen::MatrixXd d(2, 2);
  const std::vector<int> one{1}, two{1, 2};
  EXPECT_THROW(evaluate(d, one, two, two, two), ShapeError);
}

TEST(Evaluate, MatchesOracleOnRandomInstances) {
  Rng rng(301);
  int compared = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t nq = 1 + rng.below(20), ng = 1 + rng.below(50);
    const int ids = 1 + int(rng.below(6)), cams = 1 + int(rng.below(3));
    Eigen::MatrixXd d(nq, ng);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < ng; ++j)
        // coarse values so ties occur
        d(long(i), long(j)) = double(rng.below(8)) / 8.0;
    std::vector<int> qid(nq), qcam(nq), gid(ng), gcam(ng);
    for (auto& v : qid) v = int(rng.below(std::uint64_t(ids)));
    for (auto& v : qcam) v = int(rng.below(std::uint64_t(cams)));
    for (auto& v : gid) v = int(rng.below(std::uint64_t(ids)));
    for (auto& v : gcam) v = int(rng.below(std::uint64_t(cams)));
    const auto want = oracle::evaluate(d, qid, qcam, gid, gcam);
    if (want.ap.empty()) {
      EXPECT_THROW(evaluate(d, qid, qcam, gid, gcam), EvaluationError);
      continue;
    }
    const auto got = evaluate(d, qid, qcam, gid, gcam);
    ++compared;
    EXPECT_EQ(got.skipped, want.skipped);
    EXPECT_NEAR(got.mean_ap, want.mean_ap, 1e-12);
    ASSERT_EQ(got.ap.size(), want.ap.size());
    for (std::size_t i = 0; i < got.ap.size(); ++i) EXPECT_NEAR(got.ap[i], want.ap[i], 1e-12);
    for (std::size_t k = 0; k < ng; ++k) EXPECT_NEAR(got.cmc[k], want.cmc[k], 1e-12);
  }
  EXPECT_GT(compared, 200);
}

TEST(Evaluate, CmcIsMonotoneAndEndsAtOne) {
  Rng rng(302);
  Eigen::MatrixXd d = Eigen::MatrixXd::Random(10, 30);
  std::vector<int> qid(10), qcam(10, 0), gid(30), gcam(30, 1);
  for (std::size_t i = 0; i < 10; ++i) qid[i] = int(i % 5);
  for (std::size_t j = 0; j < 30; ++j) gid[j] = int(j % 5);
  const auto r = evaluate(d, qid, qcam, gid, gcam);
  for (std::size_t k = 1; k < r.cmc.size(); ++k) EXPECT_GE(r.cmc[k], r.cmc[k - 1]);
  EXPECT_DOUBLE_EQ(r.cmc.back(), 1.0);
}

TEST(DistanceMatrix, CosineDistances) {
  Eigen::MatrixXd q(2, 2), g(3, 2);
  q << 1, 0, 0, 2;
  g << 2, 0, 0, -1, 1, 1;
  const Eigen::MatrixXd d = distance_matrix(q, g);
  EXPECT_NEAR(d(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(d(1, 1), 2.0, 1e-15);
  EXPECT_NEAR(d(0, 2), 1.0 - std::sqrt(0.5), 1e-15);
}

TEST(ClipIndices, TrainClipIsStridedAndInRange) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto clips = clip_indices(40, 4, 8, ClipMode::train, seed);
    ASSERT_EQ(clips.size(), 1u);
    for (std::size_t k = 1; k < 4; ++k) EXPECT_EQ(clips[0][k], clips[0][k - 1] + 8);
    EXPECT_LT(clips[0].back(), 40u);
  }
}

TEST(ClipIndices, ShortTrackletWraps) {
  const auto clips = clip_indices(5, 4, 3, ClipMode::train, 1);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_EQ(clips[0][k], (clips[0][k - 1] + 3) % 5);
}

TEST(ClipIndices, TestChunksPadWithLastFrame) {
  const auto clips = clip_indices(10, 4, 8, ClipMode::test, 0);
  ASSERT_EQ(clips.size(), 3u);
  EXPECT_EQ(clips[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(clips[2], (std::vector<std::size_t>{8, 9, 9, 9}));
}

TEST(ClipIndices, RejectsDegenerateArguments) {
  EXPECT_THROW(clip_indices(0, 4, 1, ClipMode::test, 0), ContractError);
  EXPECT_THROW(clip_indices(4, 0, 1, ClipMode::test, 0), ContractError);
}

TEST(TrackletFeature, AveragesClipFeatures) {
  std::vector<Eigen::VectorXd> f{Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 6)};
  EXPECT_TRUE(tracklet_feature(f).isApprox(Eigen::Vector2d(2, 4)));
}

TEST(RetrievalReport, WritesFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "strf_report_test";
  std::filesystem::remove_all(dir);
  Eigen::MatrixXd d(1, 2);
  d << 0.2, 0.5;
  const std::vector<int> qid{7}, qcam{0}, gid{3, 7}, gcam{1, 1};
  const std::vector<std::size_t> ranks{1, 2};
  write_retrieval_report(evaluate(d, qid, qcam, gid, gcam), ranks, dir);
  std::ifstream report(dir / "report.txt");
  std::string text((std::istreambuf_iterator<char>(report)), {});
  EXPECT_NE(text.find("mAP 0.5000"), std::string::npos);
  EXPECT_NE(text.find("R@2 1.0000"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "cmc.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ap.csv"));
  std::filesystem::remove_all(dir);
}
