#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssrt/eval/eval.hpp"
#include "support.hpp"

using namespace ssrt;
using namespace ssrt::eval;

namespace {

Detection det(const std::string& id, Box h, std::optional<Box> o, std::size_t act, std::optional<std::size_t> oc,
              double score) {
  return {id, h, o, act, oc, score};
}

/// One image with a held-cup instance and a standing (null-object) instance.
data::Dataset two_instance_image() {
  data::Dataset ds;
  ds.vocab = data::OAVocabulary::default_synthetic();
  data::ImageAnnotation a;
  a.id = "img";
  a.image = data::Image{4, 4, 3, std::vector<std::uint8_t>(48, 0)};
  a.hois.push_back({Box(0.1, 0.1, 0.4, 0.9), Box(0.3, 0.4, 0.5, 0.6), 0, *ds.vocab.action_index("hold")});
  a.hois.push_back({Box(0.6, 0.1, 0.9, 0.9), std::nullopt, std::nullopt, *ds.vocab.action_index("stand")});
  ds.images.push_back(a);
  return ds;
}

}  // namespace

TEST(MatchDetection, RuleTable) {
  const std::vector<GroundTruth> gts = {{Box(0.1, 0.1, 0.5, 0.5), Box(0.5, 0.5, 0.9, 0.9), 0},
                                        {Box(0.1, 0.1, 0.5, 0.5), std::nullopt, 1}};
  const Box exact_h(0.1, 0.1, 0.5, 0.5), exact_o(0.5, 0.5, 0.9, 0.9);
  // Human IoU 0.4 exactly, below threshold: [0.1, 0.5] vs [0.1, 0.26] in x gives 0.16/0.4.
  const Box weak_h(0.1, 0.1, 0.26, 0.5);
  ASSERT_NEAR(iou(weak_h, exact_h), 0.4, 1e-12);
  struct Row {
    const char* name;
    Detection d;
    std::size_t cls;
    Scenario sc;
    bool tp;
  };
  const std::vector<Row> rows = {
      {"exact match", det("i", exact_h, exact_o, 0, 0, 1), 0, Scenario::Strict, true},
      {"human iou 0.4", det("i", weak_h, exact_o, 0, 0, 1), 0, Scenario::Relaxed, false},
      {"missing object box", det("i", exact_h, std::nullopt, 0, 0, 1), 0, Scenario::Relaxed, false},
      {"wrong class", det("i", exact_h, exact_o, 0, 0, 1), 2, Scenario::Relaxed, false},
      {"null gt, box given, strict", det("i", exact_h, exact_o, 1, 0, 1), 1, Scenario::Strict, false},
      {"null gt, box given, relaxed", det("i", exact_h, exact_o, 1, 0, 1), 1, Scenario::Relaxed, true},
      {"null gt, null box, strict", det("i", exact_h, std::nullopt, 1, 0, 1), 1, Scenario::Strict, true},
  };
  for (const auto& r : rows) {
    std::vector<bool> used(gts.size(), false);
    EXPECT_EQ(match_detection(r.d, gts, used, r.cls, r.sc).has_value(), r.tp) << r.name;
  }
  EXPECT_TRUE(is_null_box({0.0, 0.005, 0.009, 0.0}));
  EXPECT_FALSE(is_null_box({0.0, 0.005, 0.01, 0.0}));
}

TEST(MatchDetection, PrefersHighestOverlap) {
  const std::vector<GroundTruth> gts = {{Box(0.1, 0.1, 0.5, 0.5), std::nullopt, 0},
                                        {Box(0.12, 0.1, 0.5, 0.5), std::nullopt, 0}};
  std::vector<bool> used(2, false);
  EXPECT_EQ(match_detection(det("i", Box(0.12, 0.1, 0.5, 0.5), std::nullopt, 0, 0, 1), gts, used, 0, Scenario::Relaxed),
            std::optional<std::size_t>(1));
  EXPECT_EQ(match_detection(det("i", Box(0.12, 0.1, 0.5, 0.5), std::nullopt, 0, 0, 1), gts, used, 0, Scenario::Relaxed),
            std::optional<std::size_t>(0));
  EXPECT_FALSE(
      match_detection(det("i", Box(0.12, 0.1, 0.5, 0.5), std::nullopt, 0, 0, 1), gts, used, 0, Scenario::Relaxed));
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision({true, true, true}, 3), 1.0);
  EXPECT_EQ(average_precision({false, true}, 1), 0.5);
  EXPECT_EQ(average_precision({}, 4), 0.0);
  EXPECT_EQ(average_precision({true}, 2), 0.5);
  // Envelope: TP, FP, TP with 2 GT -> 1*0.5 + (2/3)*0.5.
  EXPECT_NEAR(average_precision({true, false, true}, 2), 0.5 + 1.0 / 3.0, 1e-15);
}

TEST(Evaluate, SingleCorrectDetectionPerGtGivesOne) {
  const auto ds = ssrt::testing::micro_dataset(3, 8);
  std::vector<Detection> dets;
  for (const auto& img : ds.images)
    for (const auto& h : img.hois) dets.push_back(det(img.id, h.human, h.object, h.action_class, h.object_class, 0.9));
  for (auto sc : {Scenario::Strict, Scenario::Relaxed})
    for (auto mode : {ClassMode::Action, ClassMode::Pair}) {
      const auto r = evaluate(dets, ds, {sc, mode, std::nullopt});
      EXPECT_DOUBLE_EQ(r.map, 1.0);
      for (const auto& c : r.classes) EXPECT_EQ(c.n_tp, c.n_gt);
    }
}

TEST(Evaluate, MatchesBruteForceScorer) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto f = ssrt::testing::random_eval_fixture(seed);
    for (auto sc : {Scenario::Strict, Scenario::Relaxed})
      for (auto mode : {ClassMode::Action, ClassMode::Pair}) {
        const auto r = evaluate(f.dets, f.ds, {sc, mode, std::nullopt});
        const auto oracle = ssrt::testing::brute_force_ap(f.dets, f.ds, sc, mode);
        ASSERT_EQ(r.classes.size(), oracle.size());
        double m = 0;
        for (const auto& c : r.classes) {
          EXPECT_NEAR(c.ap, oracle.at(c.cls), 1e-9) << "seed " << seed << " class " << c.name;
          m += oracle.at(c.cls);
        }
        EXPECT_NEAR(r.map, m / static_cast<double>(oracle.size()), 1e-9);
      }
  }
}

TEST(Evaluate, RelaxedDominatesStrictPerClass) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto f = ssrt::testing::random_eval_fixture(seed);
    for (auto mode : {ClassMode::Action, ClassMode::Pair}) {
      const auto s1 = evaluate(f.dets, f.ds, {Scenario::Strict, mode, std::nullopt});
      const auto s2 = evaluate(f.dets, f.ds, {Scenario::Relaxed, mode, std::nullopt});
      for (const auto& c : s1.classes) EXPECT_GE(*s2.ap_of(c.cls) + 1e-12, c.ap) << "seed " << seed;
      EXPECT_GE(s2.map + 1e-12, s1.map);
    }
  }
}

TEST(Evaluate, InvariantUnderMonotoneScoreTransform) {
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    auto f = ssrt::testing::random_eval_fixture(seed);
    const auto a = evaluate(f.dets, f.ds);
    for (auto& d : f.dets) d.score = std::pow(d.score, 3.0) * 0.5;
    const auto b = evaluate(f.dets, f.ds);
    ASSERT_EQ(a.classes.size(), b.classes.size());
    for (std::size_t i = 0; i < a.classes.size(); ++i) EXPECT_EQ(a.classes[i].ap, b.classes[i].ap);
  }
}

TEST(Evaluate, DuplicatesYieldOneTruePositive) {
  const auto ds = two_instance_image();
  const auto& h = ds.images[0].hois[0];
  std::vector<Detection> dets(4, det("img", h.human, h.object, h.action_class, h.object_class, 0.8));
  const auto r = evaluate(dets, ds);
  const auto& hold = r.classes.front();
  EXPECT_EQ(hold.n_det, 4u);
  EXPECT_EQ(hold.n_tp, 1u);
  EXPECT_DOUBLE_EQ(hold.ap, 1.0);
}

TEST(Evaluate, NullObjectScenarios) {
  const auto ds = two_instance_image();
  const auto& stand = ds.images[0].hois[1];
  const std::vector<Detection> boxed = {det("img", stand.human, Box(0.0, 0.0, 0.3, 0.3), stand.action_class, 2, 0.7)};
  EXPECT_EQ(*evaluate(boxed, ds, {Scenario::Strict, ClassMode::Action, std::nullopt}).ap_of(stand.action_class), 0.0);
  EXPECT_EQ(*evaluate(boxed, ds, {Scenario::Relaxed, ClassMode::Action, std::nullopt}).ap_of(stand.action_class), 1.0);
  // Pair mode ignores the predicted object class for null-object actions.
  EXPECT_EQ(*evaluate(boxed, ds, {Scenario::Relaxed, ClassMode::Pair, std::nullopt})
                 .ap_of(*ds.vocab.pair_index(std::nullopt, stand.action_class)),
            1.0);
}

TEST(Evaluate, RareSplitUsesTrainingCounts) {
  const auto ds = two_instance_image();
  std::vector<std::size_t> counts(ds.vocab.num_pairs(), 50);
  counts[*ds.vocab.pair_index(std::nullopt, ds.images[0].hois[1].action_class)] = 3;
  const auto& h = ds.images[0].hois[0];
  const std::vector<Detection> dets = {det("img", h.human, h.object, h.action_class, h.object_class, 0.9)};
  const auto r = evaluate(dets, ds, {Scenario::Relaxed, ClassMode::Pair, counts});
  ASSERT_TRUE(r.map_rare && r.map_non_rare);
  EXPECT_EQ(*r.map_rare, 0.0);
  EXPECT_EQ(*r.map_non_rare, 1.0);
  EXPECT_DOUBLE_EQ(r.map, 0.5);
  const auto j = r.to_json();
  EXPECT_EQ(j.at("splits").at("rare"), 0.0);
  EXPECT_FALSE(evaluate(dets, ds).to_json().contains("splits"));
}

TEST(Evaluate, DetectionsFromPredictions) {
  PredictionSet ps;
  QueryPrediction q;
  q.human_cxcywh = {0.5, 0.5, 0.2, 0.4};
  q.object_cxcywh = {0.001, 0.002, 0.003, 0.004};
  q.obj_probs = {0.1, 0.6, 0.3};
  q.hoi_raw = {0.5, 1.0};
  q.hoi_weighted = weight_scores(q.hoi_raw, q.obj_probs);
  ps.queries.push_back(q);
  const auto dets = detections_from_predictions("x", ps);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_FALSE(dets[0].object.has_value());
  EXPECT_EQ(dets[1].object_class, std::optional<std::size_t>(1));
  EXPECT_DOUBLE_EQ(dets[1].score, 0.6);
  EXPECT_NEAR(dets[0].human.x1(), 0.4, 1e-12);
}

TEST(Evaluate, WritesJsonAndCsv) {
  const auto f = ssrt::testing::random_eval_fixture(3);
  const auto r = evaluate(f.dets, f.ds);
  const auto dir = std::filesystem::temp_directory_path() / "ssrt_eval_test";
  std::filesystem::create_directories(dir);
  write_report(r, (dir / "report.json").string());
  std::ifstream js(dir / "report.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_DOUBLE_EQ(j.at("mAP").get<double>(), r.map);
  std::ifstream cs(dir / "report.csv");
  std::string header;
  std::getline(cs, header);
  EXPECT_EQ(header, "class,name,ap,n_gt,n_det,n_tp,rare");
}
