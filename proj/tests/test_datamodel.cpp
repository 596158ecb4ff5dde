#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssrt/data/dataset.hpp"
#include "ssrt/data/synth.hpp"

using namespace ssrt;
using namespace ssrt::data;

namespace {

nlohmann::json one_image_doc() {
  nlohmann::json j;
  j["vocabulary"] = OAVocabulary::default_synthetic().to_json();
  j["images"] = nlohmann::json::array();
  nlohmann::json img = {{"id", "a"}, {"width", 2}, {"height", 2}, {"pixels", std::vector<int>(12, 7)}};
  img["hois"] = nlohmann::json::array(
      {{{"human", {0.1, 0.1, 0.5, 0.9}}, {"object", {0.5, 0.5, 0.7, 0.7}}, {"object_class", "pizza"},
        {"action_class", "eat"}}});
  j["images"].push_back(img);
  return j;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ssrt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Bounding box (in pixel units) of pixels matching `pred` inside the pixel window of `region`.
template <class Pred>
std::array<long, 4> pixel_extent(const Image& img, const Box& region, Pred pred) {
  const double n = static_cast<double>(img.width);
  std::array<long, 4> e = {1L << 30, 1L << 30, -1, -1};
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double cx = (x + 0.5) / n, cy = (y + 0.5) / n;
      if (cx < region.x1() || cx > region.x2() || cy < region.y1() || cy > region.y2()) continue;
      if (!pred(y, x)) continue;
      e[0] = std::min<long>(e[0], x);
      e[1] = std::min<long>(e[1], y);
      e[2] = std::max<long>(e[2], x + 1);
      e[3] = std::max<long>(e[3], y + 1);
    }
  return e;
}

}  // namespace

TEST(Vocabulary, DefaultSyntheticShape) {
  const auto v = OAVocabulary::default_synthetic();
  EXPECT_EQ(v.num_objects(), 6u);
  EXPECT_EQ(v.num_actions(), 5u);
  EXPECT_EQ(v.num_pairs(), 14u);
  std::size_t nulls = 0;
  for (const auto& p : v.pairs()) nulls += !p.object.has_value();
  EXPECT_EQ(nulls, 2u);
  for (std::size_t i = 0; i < v.num_pairs(); ++i) EXPECT_EQ(v.pair_index_by_key(v.pair_key(i)), i);
  EXPECT_EQ(OAVocabulary::from_json(v.to_json()), v);
}

TEST(Vocabulary, RejectsUnknownNames) {
  auto j = OAVocabulary::default_synthetic().to_json();
  j["pairs"].push_back({"spoon", "eat"});
  EXPECT_THROW(OAVocabulary::from_json(j), ValidationError);
}

TEST(LoadDataset, EmptyImageList) {
  nlohmann::json j = one_image_doc();
  j["images"] = nlohmann::json::array();
  const auto ds = dataset_from_json(j);
  EXPECT_TRUE(ds.images.empty());
}

TEST(LoadDataset, OneTripletParsesFields) {
  const auto ds = dataset_from_json(one_image_doc());
  ASSERT_EQ(ds.images.size(), 1u);
  const auto& h = ds.images[0].hois.at(0);
  EXPECT_EQ(h.human, Box(0.1, 0.1, 0.5, 0.9));
  EXPECT_EQ(*h.object, Box(0.5, 0.5, 0.7, 0.7));
  EXPECT_EQ(*h.object_class, *ds.vocab.object_index("pizza"));
  EXPECT_EQ(h.action_class, *ds.vocab.action_index("eat"));
  EXPECT_EQ(ds.images[0].image.pixels.size(), 12u);
}

TEST(LoadDataset, ObjectOnNullOnlyActionIsRejectedWithIndex) {
  auto j = one_image_doc();
  j["images"][0]["hois"].push_back({{"human", {0.1, 0.1, 0.2, 0.2}},
                                    {"object", {0.3, 0.3, 0.4, 0.4}},
                                    {"object_class", "ball"},
                                    {"action_class", "stand"}});
  try {
    dataset_from_json(j);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("image 0, hoi 1"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, RejectsMissingObjectForObjectAction) {
  auto j = one_image_doc();
  j["images"][0]["hois"][0]["object"] = nullptr;
  j["images"][0]["hois"][0]["object_class"] = nullptr;
  EXPECT_THROW(dataset_from_json(j), ValidationError);
}

TEST(LoadDataset, RejectsUnknownClassAndBadBoxes) {
  auto j = one_image_doc();
  j["images"][0]["hois"][0]["action_class"] = "juggle";
  EXPECT_THROW(dataset_from_json(j), ValidationError);
  j = one_image_doc();
  j["images"][0]["hois"][0]["human"] = {0.5, 0.1, 0.4, 0.9};
  EXPECT_THROW(dataset_from_json(j), ValidationError);
  j = one_image_doc();
  j["images"][0]["hois"][0]["human"] = {0.5, 0.1, 1.4, 0.9};
  EXPECT_THROW(dataset_from_json(j), ValidationError);
  j = one_image_doc();
  j["images"][0]["pixels"] = std::vector<int>(5, 0);
  EXPECT_THROW(dataset_from_json(j), ValidationError);
}

TEST(LoadDataset, ParseErrorIsValidationError) {
  const auto dir = temp_dir("parse");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_dataset((dir / "bad.json").string()), ValidationError);
  EXPECT_THROW(load_dataset((dir / "missing.json").string()), ValidationError);
}

TEST(LoadDataset, SaveLoadRoundTripInlineAndExternal) {
  const auto vocab = OAVocabulary::default_synthetic();
  const auto dir = temp_dir("roundtrip");
  for (bool external : {false, true}) {
    SynthConfig sc;
    sc.external_images = external;
    const auto ds = synth_dataset(4, 6, vocab, default_layout_stats(vocab), sc);
    const auto path = (dir / (external ? "ext.json" : "inline.json")).string();
    save_dataset(ds, path);
    const auto back = load_dataset(path);
    EXPECT_EQ(back.vocab, ds.vocab);
    ASSERT_EQ(back.images.size(), ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) EXPECT_EQ(back.images[i], ds.images[i]);
  }
}

TEST(Synth, DeterministicAndEmpty) {
  const auto vocab = OAVocabulary::default_synthetic();
  const auto layout = default_layout_stats(vocab);
  const auto a = synth_dataset(9, 10, vocab, layout), b = synth_dataset(9, 10, vocab, layout);
  EXPECT_EQ(dataset_to_json(a), dataset_to_json(b));
  EXPECT_NE(dataset_to_json(a), dataset_to_json(synth_dataset(10, 10, vocab, layout)));
  EXPECT_TRUE(synth_dataset(9, 0, vocab, layout).images.empty());
}

TEST(Synth, InstancesSatisfyInvariantsAcrossSeeds) {
  const auto vocab = OAVocabulary::default_synthetic();
  const auto layout = default_layout_stats(vocab);
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto ds = synth_dataset(seed, 3, vocab, layout);
    for (const auto& img : ds.images) {
      ASSERT_GE(img.hois.size(), 1u);
      ASSERT_LE(img.hois.size(), 3u);
      for (const auto& h : img.hois) ASSERT_NO_THROW(validate_instance(h, vocab));
    }
  }
}

TEST(Synth, RenderedExtentsMatchAnnotations) {
  const auto vocab = OAVocabulary::default_synthetic();
  const auto ds = synth_dataset(21, 40, vocab, default_layout_stats(vocab));
  const double n = 32.0;
  for (const auto& img : ds.images) {
    for (const auto& h : img.hois) {
      const Box hull = h.object ? Box(std::min(h.human.x1(), h.object->x1()), std::min(h.human.y1(), h.object->y1()),
                                      std::max(h.human.x2(), h.object->x2()), std::max(h.human.y2(), h.object->y2()))
                                : h.human;
      auto near = [&](const std::array<long, 4>& e, const Box& b) {
        EXPECT_LE(std::abs(e[0] - b.x1() * n), 1.0);
        EXPECT_LE(std::abs(e[1] - b.y1() * n), 1.0);
        EXPECT_LE(std::abs(e[2] - b.x2() * n), 1.0);
        EXPECT_LE(std::abs(e[3] - b.y2() * n), 1.0);
      };
      const auto painted = pixel_extent(img.image, hull, [&](std::size_t y, std::size_t x) {
        return img.image.at(y, x, 0) || img.image.at(y, x, 1) || img.image.at(y, x, 2);
      });
      near(painted, hull);
      if (h.object) {
        const auto col = object_color(*h.object_class);
        const auto obj = pixel_extent(img.image, *h.object, [&](std::size_t y, std::size_t x) {
          return img.image.at(y, x, 0) == col[0] && img.image.at(y, x, 1) == col[1] && img.image.at(y, x, 2) == col[2];
        });
        near(obj, *h.object);
      }
    }
  }
}

TEST(GtOaTargets, SetSemantics) {
  const auto vocab = OAVocabulary::default_synthetic();
  ImageAnnotation ann;
  EXPECT_EQ(gt_oa_targets(ann, vocab), std::vector<double>(14, 0.0));
  const Box h(0.1, 0.1, 0.3, 0.3), o(0.3, 0.3, 0.4, 0.4);
  const auto pizza = *vocab.object_index("pizza"), eat = *vocab.action_index("eat");
  ann.hois.push_back({h, o, pizza, eat});
  ann.hois.push_back({Box(0.5, 0.5, 0.7, 0.7), o, pizza, eat});
  auto t = gt_oa_targets(ann, vocab);
  EXPECT_EQ(std::count(t.begin(), t.end(), 1.0), 1);
  EXPECT_EQ(t[*vocab.pair_index(pizza, eat)], 1.0);

  ann.hois.push_back({h, std::nullopt, std::nullopt, *vocab.action_index("walk")});
  t = gt_oa_targets(ann, vocab);
  EXPECT_EQ(std::count(t.begin(), t.end(), 1.0), 2);
  // Enumeration order: hold x6, eat x2, look x4, stand, walk.
  EXPECT_EQ(t[6], 1.0);
  EXPECT_EQ(t[13], 1.0);
  EXPECT_EQ(gt_pairs(ann, vocab), (std::vector<std::size_t>{6, 13}));
}

TEST(GroupInstances, MergesActionsOfSharedBoxes) {
  const auto vocab = OAVocabulary::default_synthetic();
  ImageAnnotation ann;
  const Box h(0.1, 0.1, 0.3, 0.3), o(0.3, 0.3, 0.4, 0.4);
  ann.hois.push_back({h, o, 1, 1});
  ann.hois.push_back({h, o, 1, 0});
  ann.hois.push_back({h, o, 1, 0});
  ann.hois.push_back({h, std::nullopt, std::nullopt, 3});
  const auto g = group_instances(ann);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].actions, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(g[1].actions, (std::vector<std::size_t>{3}));
}

TEST(ImageIo, PnmRoundTrip) {
  const auto dir = temp_dir("pnm");
  Image rgb{3, 2, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18}};
  write_pnm((dir / "a.ppm").string(), rgb);
  EXPECT_EQ(read_pnm((dir / "a.ppm").string()), rgb);
  Image gray{2, 2, 1, {0, 64, 128, 255}};
  write_pnm((dir / "a.pgm").string(), gray);
  EXPECT_EQ(read_pnm((dir / "a.pgm").string()), gray);
}
