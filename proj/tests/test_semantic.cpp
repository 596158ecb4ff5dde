#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "httplib.h"
#include "ssrt/nn/gradcheck.hpp"
#include "ssrt/nn/layers.hpp"
#include "ssrt/semantic/providers.hpp"
#include "ssrt/semantic/templates.hpp"

using namespace ssrt;
using namespace ssrt::semantic;

namespace {

data::OAVocabulary phone_vocab() {
  return data::OAVocabulary({{"phone", "the"}, {"pizza", "a"}},
                            {{"talk", "talking", "on", false}, {"eat", "eating", "", false}, {"stand", "standing", "", true}},
                            {{0, 0}, {1, 1}, {std::nullopt, 2}});
}

/// Text-encoder stand-in answering every sentence with a fixed vector (or a per-text one).
class MockEncoder {
 public:
  explicit MockEncoder(std::function<std::vector<double>(const std::string&)> f, int status = 200)
      : f_(std::move(f)), status_(status) {
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      const auto j = nlohmann::json::parse(req.body);
      nlohmann::json out = {{"embeddings", nlohmann::json::array()}};
      std::size_t dim = 0;
      for (const auto& t : j.at("texts")) {
        const auto v = f_(t.get<std::string>());
        dim = v.size();
        out["embeddings"].push_back(v);
      }
      out["dim"] = dim;
      res.status = status_;
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEncoder() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> requests{0};

 private:
  std::function<std::vector<double>(const std::string&)> f_;
  int status_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(Templatize, SentenceRules) {
  const auto v = phone_vocab();
  EXPECT_EQ(templatize(0, v, TemplateMode::Oa), "A person is talking on the phone.");
  EXPECT_EQ(templatize(0, v, TemplateMode::ActionOnly), "A person is talking.");
  EXPECT_EQ(templatize(1, v, TemplateMode::Oa), "A person is eating a pizza.");
  EXPECT_EQ(templatize(2, v, TemplateMode::Oa), "A person is standing.");
  EXPECT_EQ(template_mode_from_string("action-only"), TemplateMode::ActionOnly);
  EXPECT_THROW(template_mode_from_string("caption"), ValidationError);
}

TEST(OneHotProvider, IndicatorRows) {
  OneHotProvider p(14);
  const auto t = p.embed_pairs({3});
  ASSERT_EQ(t.cols(), 14u);
  for (std::size_t j = 0; j < 14; ++j) EXPECT_EQ(t(0, j), j == 3 ? 1.0 : 0.0);
  EXPECT_THROW(p.embed_pairs({14}), ValidationError);
}

TEST(TableProvider, LooksUpRowsAndIsOrderEquivariant) {
  const auto v = data::OAVocabulary::default_synthetic();
  EmbeddingTable table;
  table.dim = 3;
  for (std::size_t p = 0; p < v.num_pairs(); ++p) table.entries[v.pair_key(p)] = std::vector<double>(3, 0.1 * p);
  TableProvider prov(table, v);
  const auto rows = prov.embed_pairs({5, 2, 9});
  EXPECT_DOUBLE_EQ(rows(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(rows(1, 2), 0.2);
  EXPECT_DOUBLE_EQ(rows(2, 1), 0.1 * 9);
  const auto perm = prov.embed_pairs({9, 5, 2});
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(perm(0, j), rows(2, j));
    EXPECT_EQ(perm(1, j), rows(0, j));
  }
  table.entries.erase(v.pair_key(4));
  TableProvider missing(table, v);
  EXPECT_THROW(missing.embed_pairs({4}), ValidationError);
}

TEST(TableProvider, FileRoundTripAndWidthCheck) {
  const auto v = data::OAVocabulary::default_synthetic();
  const auto table = to_table(OneHotProvider(v.num_pairs()), v);
  const auto path = (std::filesystem::temp_directory_path() / "ssrt_test_table.json").string();
  save_embedding_table(table, path);
  const auto back = load_embedding_table(path);
  EXPECT_EQ(back.dim, table.dim);
  EXPECT_EQ(back.entries, table.entries);
  auto j = table.to_json();
  j["entries"][v.pair_key(0)].push_back(1.0);
  EXPECT_THROW(EmbeddingTable::from_json(j), ValidationError);
}

TEST(RemoteProvider, ConstantMockPassesThrough) {
  MockEncoder mock([](const std::string&) { return std::vector<double>{0.25, -1.0, 3.0}; });
  const auto v = data::OAVocabulary::default_synthetic();
  RemoteProvider p(std::make_shared<TextEncoderClient>(RemoteConfig{mock.url(), 5.0, 4}), v, TemplateMode::Oa);
  const auto rows = embed_all_pairs(p, v.num_pairs());
  ASSERT_EQ(rows.rows(), v.num_pairs());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    EXPECT_EQ(rows(i, 0), 0.25);
    EXPECT_EQ(rows(i, 1), -1.0);
    EXPECT_EQ(rows(i, 2), 3.0);
  }
  EXPECT_EQ(p.dim(), 3u);
}

TEST(RemoteProvider, CachesSentences) {
  MockEncoder mock([](const std::string& s) { return std::vector<double>{static_cast<double>(s.size())}; });
  const auto v = phone_vocab();
  auto client = std::make_shared<TextEncoderClient>(RemoteConfig{mock.url(), 5.0, 32});
  RemoteProvider p(client, v, TemplateMode::Oa);
  const auto a = p.embed_pairs({0, 1});
  const auto b = p.embed_pairs({1, 0});
  EXPECT_EQ(mock.requests.load(), 1);
  EXPECT_EQ(client->requests_sent(), 1u);
  EXPECT_EQ(a(0, 0), b(1, 0));
  EXPECT_EQ(a(0, 0), static_cast<double>(std::string("A person is talking on the phone.").size()));
}

TEST(RemoteProvider, BatchesByMaxBatch) {
  MockEncoder mock([](const std::string&) { return std::vector<double>{1.0}; });
  const auto v = data::OAVocabulary::default_synthetic();
  RemoteProvider p(std::make_shared<TextEncoderClient>(RemoteConfig{mock.url(), 5.0, 4}), v, TemplateMode::Oa);
  embed_all_pairs(p, v.num_pairs());
  EXPECT_EQ(mock.requests.load(), 4);  // 14 distinct sentences in batches of 4
}

TEST(RemoteProvider, ErrorsAreRuntimeFailures) {
  {
    MockEncoder mock([](const std::string&) { return std::vector<double>{1.0}; }, 500);
    TextEncoderClient c(RemoteConfig{mock.url(), 5.0, 4});
    EXPECT_THROW(c.embed({"x"}), RuntimeFailure);
  }
  {
    MockEncoder mock([](const std::string& s) { return std::vector<double>(s.size() % 2 ? 2 : 3, 0.0); });
    TextEncoderClient c(RemoteConfig{mock.url(), 5.0, 1});
    c.embed({"ab"});
    EXPECT_THROW(c.embed({"abc"}), RuntimeFailure);
  }
  std::string dead_url;
  {
    MockEncoder gone([](const std::string&) { return std::vector<double>{1.0}; });
    dead_url = gone.url();
  }
  TextEncoderClient c(RemoteConfig{dead_url, 0.5, 4});
  EXPECT_THROW(c.embed({"x"}), RuntimeFailure);
  EXPECT_THROW(TextEncoderClient(RemoteConfig{"localhost:80", 1.0, 4}), ValidationError);
}

TEST(ProjectSemantic, IdentityZeroAndGradient) {
  nn::ParamStore<double> store(3);
  nn::Linear<double> proj(store, "sem", 4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) proj.weight().value(i, j) = i == j ? 1.0 : 0.0;
  const auto raw = nn::Tensor<double>({1, 4}, std::vector<double>{0.3, -0.2, 0.9, 1.5});
  {
    nn::Tape<double> tape(false);
    const auto y = proj(tape.constant(raw));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.value()[j], raw[j]);
  }
  proj.weight().value.fill(0.0);
  {
    nn::Tape<double> tape(false);
    const auto y = proj(tape.constant(raw));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.value()[j], 0.0);
  }
  nn::ParamStore<double> rand_store(4);
  nn::Linear<double> p2(rand_store, "sem", 4, 3);
  const auto rep = nn::check_gradients(rand_store, [&](nn::Tape<double>& t) {
    auto y = p2(t.constant(raw));
    return nn::sum(nn::mul(y, y));
  });
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param;
}
