#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "ssrt/data/vocabulary.hpp"
#include "ssrt/error.hpp"
#include "ssrt/nn/tensor.hpp"
#include "ssrt/semantic/templates.hpp"

namespace ssrt::semantic {

/// Source of frozen d_e-wide embeddings for OA pairs.
class SemanticProvider {
 public:
  virtual ~SemanticProvider() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t dim() const = 0;
  /// One row per requested pair, in request order.
  virtual nn::Tensor<double> embed_pairs(const std::vector<std::size_t>& pairs) const = 0;
};

/// Indicator vector over all pairs.
class OneHotProvider final : public SemanticProvider {
 public:
  explicit OneHotProvider(std::size_t num_pairs) : n_(num_pairs) {}
  std::string kind() const override { return "one-hot"; }
  std::size_t dim() const override { return n_; }
  nn::Tensor<double> embed_pairs(const std::vector<std::size_t>& pairs) const override {
    nn::Tensor<double> out = nn::Tensor<double>::matrix(pairs.size(), n_);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i] >= n_) throw ValidationError("pair index out of range for one-hot provider");
      out(i, pairs[i]) = 1.0;
    }
    return out;
  }

 private:
  std::size_t n_;
};

/// Embeddings file: {"dim": d_e, "entries": {"object:action": [floats]}}.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> entries;

  nlohmann::json to_json() const { return {{"dim", dim}, {"entries", entries}}; }
  static EmbeddingTable from_json(const nlohmann::json& j) {
    try {
      EmbeddingTable t;
      t.dim = j.at("dim").get<std::size_t>();
      t.entries = j.at("entries").get<std::map<std::string, std::vector<double>>>();
      for (const auto& [k, v] : t.entries)
        if (v.size() != t.dim)
          throw ValidationError("embedding '" + k + "' has width " + std::to_string(v.size()) + ", expected " +
                                std::to_string(t.dim));
      return t;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("embeddings file: ") + e.what());
    }
  }
};

inline EmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open embeddings file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("embeddings parse error: " + std::string(e.what()));
  }
  return EmbeddingTable::from_json(j);
}

inline void save_embedding_table(const EmbeddingTable& t, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write embeddings file: " + path);
  os << t.to_json().dump();
}

/// Offline lookup of precomputed rows keyed by pair.
class TableProvider final : public SemanticProvider {
 public:
  TableProvider(EmbeddingTable table, data::OAVocabulary vocab) : table_(std::move(table)), vocab_(std::move(vocab)) {}
  std::string kind() const override { return "table"; }
  std::size_t dim() const override { return table_.dim; }
  nn::Tensor<double> embed_pairs(const std::vector<std::size_t>& pairs) const override {
    nn::Tensor<double> out = nn::Tensor<double>::matrix(pairs.size(), table_.dim);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string key = vocab_.pair_key(pairs[i]);
      auto it = table_.entries.find(key);
      if (it == table_.entries.end()) throw ValidationError("embeddings file has no row for '" + key + "'");
      for (std::size_t j = 0; j < table_.dim; ++j) out(i, j) = it->second[j];
    }
    return out;
  }

 private:
  EmbeddingTable table_;
  data::OAVocabulary vocab_;
};

struct RemoteConfig {
  std::string endpoint = "http://127.0.0.1:8080";
  double timeout_seconds = 10.0;
  std::size_t max_batch = 32;
};

/// Client for a text-encoder service: POST {base}/embed with {"texts": [...]},
/// answered by {"dim": n, "embeddings": [[...], ...]}. Results are cached per sentence,
/// so repeated sentences never hit the network twice.
class TextEncoderClient {
 public:
  explicit TextEncoderClient(RemoteConfig cfg) : cfg_(std::move(cfg)) {
    const auto scheme = cfg_.endpoint.find("://");
    if (scheme == std::string::npos) throw ValidationError("endpoint must look like http://host:port[/prefix]");
    const auto slash = cfg_.endpoint.find('/', scheme + 3);
    host_ = cfg_.endpoint.substr(0, slash);
    prefix_ = slash == std::string::npos ? "" : cfg_.endpoint.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (cfg_.max_batch == 0) throw ValidationError("max batch size must be positive");
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) {
    std::vector<std::string> missing;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (const auto& t : texts)
        if (!cache_.count(t) && std::find(missing.begin(), missing.end(), t) == missing.end()) missing.push_back(t);
    }
    for (std::size_t start = 0; start < missing.size(); start += cfg_.max_batch) {
      const std::size_t end = std::min(missing.size(), start + cfg_.max_batch);
      std::vector<std::string> batch(missing.begin() + static_cast<std::ptrdiff_t>(start),
                                     missing.begin() + static_cast<std::ptrdiff_t>(end));
      auto rows = request(batch);
      std::lock_guard<std::mutex> lock(mu_);
      for (std::size_t i = 0; i < batch.size(); ++i) cache_.emplace(batch[i], std::move(rows[i]));
    }
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(cache_.at(t));
    return out;
  }

  std::size_t requests_sent() const {
    std::lock_guard<std::mutex> lock(mu_);
    return requests_;
  }
  std::optional<std::size_t> dim() const {
    std::lock_guard<std::mutex> lock(mu_);
    return dim_;
  }

 private:
  std::vector<std::vector<double>> request(const std::vector<std::string>& batch) {
    httplib::Client cli(host_);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    const nlohmann::json body = {{"texts", batch}};
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++requests_;
    }
    auto res = cli.Post(prefix_ + "/embed", body.dump(), "application/json");
    if (!res) throw RuntimeFailure("text encoder unreachable at " + cfg_.endpoint + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw RuntimeFailure("text encoder returned HTTP " + std::to_string(res->status));
    nlohmann::json j;
    std::size_t d = 0;
    std::vector<std::vector<double>> rows;
    try {
      j = nlohmann::json::parse(res->body);
      d = j.at("dim").get<std::size_t>();
      rows = j.at("embeddings").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure(std::string("malformed text encoder response: ") + e.what());
    }
    if (rows.size() != batch.size()) throw RuntimeFailure("text encoder returned the wrong number of embeddings");
    for (const auto& r : rows)
      if (r.size() != d) throw RuntimeFailure("text encoder embedding width does not match its declared dim");
    std::lock_guard<std::mutex> lock(mu_);
    if (dim_ && *dim_ != d) throw RuntimeFailure("text encoder changed its embedding width");
    dim_ = d;
    return rows;
  }

  RemoteConfig cfg_;
  std::string host_;
  std::string prefix_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<double>> cache_;
  std::optional<std::size_t> dim_;
  std::size_t requests_ = 0;
};

/// Embeds the templated sentence of each pair through a remote text encoder.
class RemoteProvider final : public SemanticProvider {
 public:
  RemoteProvider(std::shared_ptr<TextEncoderClient> client, data::OAVocabulary vocab, TemplateMode mode)
      : client_(std::move(client)), vocab_(std::move(vocab)), mode_(mode) {}
  std::string kind() const override { return "remote"; }
  std::size_t dim() const override {
    if (!client_->dim()) client_->embed({templatize(0, vocab_, mode_)});
    return *client_->dim();
  }
  nn::Tensor<double> embed_pairs(const std::vector<std::size_t>& pairs) const override {
    std::vector<std::string> texts;
    for (auto p : pairs) texts.push_back(templatize(p, vocab_, mode_));
    const auto rows = client_->embed(texts);
    const std::size_t d = rows.empty() ? dim() : rows[0].size();
    nn::Tensor<double> out = nn::Tensor<double>::matrix(pairs.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) out(i, j) = rows[i][j];
    return out;
  }
  TextEncoderClient& client() const { return *client_; }

 private:
  std::shared_ptr<TextEncoderClient> client_;
  data::OAVocabulary vocab_;
  TemplateMode mode_;
};

/// Embeddings for every pair of the vocabulary, in pair order.
inline nn::Tensor<double> embed_all_pairs(const SemanticProvider& provider, std::size_t num_pairs) {
  std::vector<std::size_t> all(num_pairs);
  for (std::size_t i = 0; i < num_pairs; ++i) all[i] = i;
  return provider.embed_pairs(all);
}

/// Writes every pair's embedding to a lookup table, for offline use.
inline EmbeddingTable to_table(const SemanticProvider& provider, const data::OAVocabulary& vocab) {
  const auto rows = embed_all_pairs(provider, vocab.num_pairs());
  EmbeddingTable t;
  t.dim = rows.cols();
  for (std::size_t p = 0; p < vocab.num_pairs(); ++p)
    t.entries[vocab.pair_key(p)] = std::vector<double>(rows.data() + p * t.dim, rows.data() + (p + 1) * t.dim);
  return t;
}

}  // namespace ssrt::semantic
