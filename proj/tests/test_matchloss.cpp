#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "ssrt/matchloss/loss.hpp"
#include "support.hpp"

using namespace ssrt;

namespace {

CostMatrix random_matrix(std::mt19937_64& rng, std::size_t n, std::size_t m, bool integer) {
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_int_distribution<int> k(0, 2);
  CostMatrix c(n, std::vector<double>(m));
  for (auto& row : c)
    for (auto& v : row) v = integer ? k(rng) : u(rng);
  return c;
}

/// Head outputs held as tape constants, built from raw logits.
struct Heads {
  nn::Tensor<double> hb, ob, obj, hoi, oa;

  static Heads random(std::mt19937_64& rng, std::size_t nq, std::size_t nobj, std::size_t nact, std::size_t ns) {
    std::uniform_real_distribution<double> u(0.05, 0.95), z(-3.0, 3.0);
    Heads h{nn::Tensor<double>({nq, 4}), nn::Tensor<double>({nq, 4}), nn::Tensor<double>({nq, nobj + 1}),
            nn::Tensor<double>({nq, nact}), nn::Tensor<double>({1, ns})};
    for (auto* t : {&h.hb, &h.ob})
      for (std::size_t q = 0; q < nq; ++q) {
        (*t)(q, 0) = u(rng);
        (*t)(q, 1) = u(rng);
        (*t)(q, 2) = 0.05 + 0.4 * u(rng);
        (*t)(q, 3) = 0.05 + 0.4 * u(rng);
      }
    for (auto* t : {&h.obj, &h.hoi, &h.oa})
      for (auto& v : t->values()) v = z(rng);
    return h;
  }

  Heads permuted(const std::vector<std::size_t>& perm) const {
    Heads p = *this;
    for (auto [src, dst] : {std::pair{&hb, &p.hb}, {&ob, &p.ob}, {&obj, &p.obj}, {&hoi, &p.hoi}})
      for (std::size_t q = 0; q < perm.size(); ++q)
        for (std::size_t j = 0; j < src->cols(); ++j) (*dst)(q, j) = (*src)(perm[q], j);
    return p;
  }

  HeadOutputs<double> on(nn::Tape<double>& t) const {
    return {t.constant(hb), t.constant(ob), t.constant(obj), t.constant(hoi)};
  }
};

double total_loss(const Heads& h, const std::vector<data::TargetGroup>& gt, const std::vector<double>& oa,
                  const LossWeights& w = {}) {
  nn::Tape<double> t(false);
  return matched_loss(h.on(t), t.constant(h.oa), gt, oa, w).total_value;
}

std::vector<data::TargetGroup> groups_of(const data::ImageAnnotation& ann) { return data::group_instances(ann); }

}  // namespace

// ---------------------------------------------------------------------------
// Hungarian

TEST(Hungarian, SmallExample) {
  const CostMatrix c = {{1, 2}, {3, 0}};
  EXPECT_EQ(hungarian(c), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(detail::assignment_cost(c, hungarian(c)), 1.0);
}

TEST(Hungarian, DiagonalDominant) {
  CostMatrix c(5, std::vector<double>(7, 10.0));
  for (std::size_t i = 0; i < 5; ++i) c[i][i] = 0.0;
  EXPECT_EQ(hungarian(c), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Hungarian, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    const std::size_t m = n + rng() % (10 - n);
    const auto c = random_matrix(rng, n, m, false);
    const auto a = hungarian(c);
    const auto oracle = ssrt::testing::brute_force_assignment(c);
    EXPECT_EQ(detail::assignment_cost(c, a), oracle.cost) << "trial " << trial;
    EXPECT_EQ(a, oracle.cols) << "trial " << trial;
  }
}

TEST(Hungarian, LexicographicTieBreak) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 5;
    const std::size_t m = n + rng() % (8 - n);
    const auto c = random_matrix(rng, n, m, true);
    const auto a = hungarian(c);
    const auto oracle = ssrt::testing::brute_force_assignment(c);
    EXPECT_EQ(detail::assignment_cost(c, a), oracle.cost);
    EXPECT_EQ(a, oracle.cols) << "trial " << trial;
    std::vector<bool> used(m, false);
    for (auto j : a) {
      EXPECT_FALSE(used[j]);
      used[j] = true;
    }
  }
}

TEST(Hungarian, RejectsBadInput) {
  EXPECT_TRUE(hungarian({}).empty());
  EXPECT_THROW(hungarian({{1.0}, {2.0}}), ValidationError);
  EXPECT_THROW(hungarian({{1.0, 2.0}, {1.0}}), ValidationError);
  EXPECT_THROW(hungarian({{std::nan(""), 1.0}}), ValidationError);
}

// ---------------------------------------------------------------------------
// Matching cost

TEST(MatchCost, PerfectPredictionDominatesItsRow) {
  const auto ds = ssrt::testing::micro_dataset(4, 30);
  std::mt19937_64 rng(5);
  const auto nobj = ds.vocab.num_objects(), nact = ds.vocab.num_actions();
  for (const auto& ann : ds.images) {
    const auto gt = groups_of(ann);
    auto h = Heads::random(rng, 6, nobj, nact, ds.vocab.num_pairs());
    PredictionSet ps = to_prediction_set(h.on(*std::make_unique<nn::Tape<double>>(false).get()));
    for (std::size_t g = 0; g < gt.size(); ++g) {
      // Query g predicts group g exactly with full confidence.
      auto& q = ps.queries[g];
      q.human_cxcywh = gt[g].human.center_form();
      if (gt[g].object) q.object_cxcywh = gt[g].object->center_form();
      q.obj_probs.assign(nobj + 1, 0.0);
      q.obj_probs[gt[g].object_class ? *gt[g].object_class : nobj] = 1.0;
      q.hoi_raw.assign(nact, 0.0);
      for (auto a : gt[g].actions) q.hoi_raw[a] = 1.0;
    }
    const auto c = match_cost(ps, gt, LossWeights{});
    for (std::size_t g = 0; g < gt.size(); ++g)
      for (std::size_t q = 0; q < ps.queries.size(); ++q) {
        if (q == g) continue;
        const auto& other = ps.queries[q];
        const bool same = other.human_cxcywh == ps.queries[g].human_cxcywh &&
                          other.object_cxcywh == ps.queries[g].object_cxcywh;
        if (!same) {
          EXPECT_LT(c[g][g], c[g][q]);
        }
      }
  }
}

TEST(MatchCost, ZeroWeightsAndIdenticalQueries) {
  const auto ds = ssrt::testing::micro_dataset(4, 5);
  std::mt19937_64 rng(6);
  auto h = Heads::random(rng, 4, ds.vocab.num_objects(), ds.vocab.num_actions(), ds.vocab.num_pairs());
  for (std::size_t j = 0; j < 4; ++j) h.hb(2, j) = h.hb(1, j), h.ob(2, j) = h.ob(1, j);
  for (std::size_t j = 0; j < h.obj.cols(); ++j) h.obj(2, j) = h.obj(1, j);
  for (std::size_t j = 0; j < h.hoi.cols(); ++j) h.hoi(2, j) = h.hoi(1, j);
  nn::Tape<double> t(false);
  const auto ps = to_prediction_set(h.on(t));
  for (const auto& ann : ds.images) {
    const auto gt = groups_of(ann);
    const auto c = match_cost(ps, gt, LossWeights{});
    for (std::size_t g = 0; g < gt.size(); ++g) EXPECT_EQ(c[g][1], c[g][2]);
    LossWeights zero{0, 0, 0, 0, 0, 0};
    for (const auto& row : match_cost(ps, gt, zero))
      for (double v : row) EXPECT_EQ(v, 0.0);
  }
}

// ---------------------------------------------------------------------------
// Loss

TEST(Loss, ExactOneHotPredictionHasZeroBoxAndClassTerms) {
  const auto ds = ssrt::testing::micro_dataset(8, 10);
  const auto nobj = ds.vocab.num_objects(), nact = ds.vocab.num_actions();
  for (const auto& ann : ds.images) {
    const auto gt = groups_of(ann);
    const std::size_t nq = gt.size() + 2;
    Heads h{nn::Tensor<double>({nq, 4}, 0.5), nn::Tensor<double>({nq, 4}, 0.5), nn::Tensor<double>({nq, nobj + 1}, -60.0),
            nn::Tensor<double>({nq, nact}, -60.0), nn::Tensor<double>({1, ds.vocab.num_pairs()}, 0.0)};
    for (std::size_t q = 0; q < nq; ++q) h.obj(q, nobj) = 60.0;  // background
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const auto hc = gt[g].human.center_form();
      for (std::size_t j = 0; j < 4; ++j) h.hb(g, j) = hc[j];
      if (gt[g].object) {
        const auto oc = gt[g].object->center_form();
        for (std::size_t j = 0; j < 4; ++j) h.ob(g, j) = oc[j];
        h.obj(g, nobj) = -60.0;
        h.obj(g, *gt[g].object_class) = 60.0;
      } else {
        h.obj(g, nobj) = -60.0;
        h.obj(g, 0) = 60.0;
      }
      for (auto a : gt[g].actions) h.hoi(g, a) = 60.0;
    }
    nn::Tape<double> t(false);
    const auto r = matched_loss(h.on(t), t.constant(h.oa), gt, data::gt_oa_targets(ann, ds.vocab), LossWeights{});
    EXPECT_NEAR(r.box, 0.0, 1e-12);
    EXPECT_NEAR(r.giou, 0.0, 1e-12);
    EXPECT_NEAR(r.obj, 0.0, 1e-12);
    EXPECT_NEAR(r.hoi, 0.0, 1e-12);
    std::vector<std::size_t> expected(gt.size());
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    EXPECT_EQ(r.assignment, expected);
  }
}

TEST(Loss, EmptyGroundTruthKeepsBackgroundAndOaTerms) {
  std::mt19937_64 rng(3);
  const auto vocab = data::OAVocabulary::default_synthetic();
  const auto h = Heads::random(rng, 5, vocab.num_objects(), vocab.num_actions(), vocab.num_pairs());
  nn::Tape<double> t(false);
  const std::vector<double> oa(vocab.num_pairs(), 0.0);
  const auto r = matched_loss(h.on(t), t.constant(h.oa), {}, oa, LossWeights{});
  EXPECT_EQ(r.box, 0.0);
  EXPECT_EQ(r.giou, 0.0);
  EXPECT_EQ(r.hoi, 0.0);
  EXPECT_GT(r.obj, 0.0);
  EXPECT_GT(r.oa, 0.0);
  EXPECT_NEAR(r.total_value, r.obj + r.oa, 1e-12);
  // The background CE equals the plain weighted mean of -log P(background).
  double ce = 0;
  for (std::size_t q = 0; q < 5; ++q) {
    std::vector<double> row(h.obj.cols());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = h.obj(q, j);
    ce -= std::log(softmax(row).back());
  }
  EXPECT_NEAR(r.obj, ce / 5.0, 1e-12);
}

TEST(Loss, InvariantToQueryAndGroundTruthOrder) {
  const auto ds = ssrt::testing::micro_dataset(12, 40);
  std::mt19937_64 rng(8);
  for (const auto& ann : ds.images) {
    const auto gt = groups_of(ann);
    const auto oa = data::gt_oa_targets(ann, ds.vocab);
    const auto h = Heads::random(rng, 6, ds.vocab.num_objects(), ds.vocab.num_actions(), ds.vocab.num_pairs());
    const double base = total_loss(h, gt, oa);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_NEAR(total_loss(h.permuted(perm), gt, oa), base, 1e-9);
    auto rev = gt;
    std::reverse(rev.begin(), rev.end());
    EXPECT_NEAR(total_loss(h, rev, oa), base, 1e-9);
  }
}

TEST(Loss, NullObjectTermsFollowSettings) {
  const auto vocab = data::OAVocabulary::default_synthetic();
  std::mt19937_64 rng(4);
  const auto h = Heads::random(rng, 3, vocab.num_objects(), vocab.num_actions(), vocab.num_pairs());
  const data::TargetGroup null_group{Box(0.1, 0.1, 0.5, 0.9), std::nullopt, std::nullopt, {3}};
  const std::vector<double> oa(vocab.num_pairs(), 0.0);
  nn::Tape<double> t(false);
  LossWeights w;
  const auto fg = set_loss(h.on(t), t.constant(h.oa), {null_group}, oa, {1}, w);
  w.null_foreground = false;
  const auto plain = set_loss(h.on(t), t.constant(h.oa), {null_group}, oa, {1}, w);
  // Without the foreground target the matched row drops out of classification.
  double bg = 0, wsum = 0, fg_row = 0;
  for (std::size_t q = 0; q < 3; ++q) {
    std::vector<double> row(h.obj.cols());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = h.obj(q, j);
    const auto p = softmax(row);
    if (q == 1) {
      fg_row = -std::log(1.0 - p.back());
    } else {
      bg += 0.1 * -std::log(p.back());
      wsum += 0.1;
    }
  }
  EXPECT_NEAR(plain.obj, bg / wsum, 1e-12);
  EXPECT_NEAR(fg.obj, (bg + fg_row) / (wsum + 1.0), 1e-12);
  EXPECT_EQ(fg.box, plain.box);
  w.scenario1 = true;
  const auto s1 = set_loss(h.on(t), t.constant(h.oa), {null_group}, oa, {1}, w);
  double l1 = 0;
  for (std::size_t j = 0; j < 4; ++j) l1 += h.ob(1, j);
  EXPECT_NEAR(s1.box - plain.box, l1, 1e-12);
}

TEST(Loss, RejectsBadAssignments) {
  const auto vocab = data::OAVocabulary::default_synthetic();
  std::mt19937_64 rng(4);
  const auto h = Heads::random(rng, 3, vocab.num_objects(), vocab.num_actions(), vocab.num_pairs());
  const data::TargetGroup g{Box(0.1, 0.1, 0.5, 0.9), std::nullopt, std::nullopt, {3}};
  const std::vector<double> oa(vocab.num_pairs(), 0.0);
  nn::Tape<double> t(false);
  EXPECT_THROW(set_loss(h.on(t), t.constant(h.oa), {g, g}, oa, {1, 1}, LossWeights{}), ValidationError);
  EXPECT_THROW(set_loss(h.on(t), t.constant(h.oa), {g}, oa, {}, LossWeights{}), ValidationError);
  EXPECT_THROW(set_loss(h.on(t), t.constant(h.oa), {g}, {1.0}, {0}, LossWeights{}), ValidationError);
  auto bad = g;
  bad.actions = {vocab.num_actions()};
  EXPECT_THROW(set_loss(h.on(t), t.constant(h.oa), {bad}, oa, {0}, LossWeights{}), ValidationError);
  LossWeights neg;
  neg.box = -1;
  EXPECT_THROW(neg.validate(), ValidationError);
}
