#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssrt/data/dataset.hpp"
#include "ssrt/eval/eval.hpp"
#include "ssrt/matchloss/loss.hpp"
#include "ssrt/model.hpp"
#include "ssrt/nn/checkpoint.hpp"
#include "ssrt/semantic/providers.hpp"
#include "ssrt/spatial/stats.hpp"
#include "ssrt/train/adamw.hpp"
#include "ssrt/train/config.hpp"

namespace ssrt::train {

using Scalar = float;
using Model = SSRTModel<Scalar>;

/// Semantic provider named by the config.
inline std::unique_ptr<semantic::SemanticProvider> make_provider(const TrainConfig& cfg,
                                                                 const data::OAVocabulary& vocab) {
  if (cfg.semantic_provider == "one-hot") return std::make_unique<semantic::OneHotProvider>(vocab.num_pairs());
  if (cfg.semantic_provider == "table")
    return std::make_unique<semantic::TableProvider>(semantic::load_embedding_table(cfg.embeddings), vocab);
  semantic::RemoteConfig rc;
  rc.endpoint = cfg.endpoint;
  return std::make_unique<semantic::RemoteProvider>(std::make_shared<semantic::TextEncoderClient>(rc), vocab,
                                                    cfg.model.semantic_mode);
}

/// Vocabulary from the data, statistics from the stats file (or fitted on the data),
/// and the provider's embedding of every pair.
inline ModelAssets build_assets(const TrainConfig& cfg, const data::Dataset& train) {
  ModelAssets a;
  a.vocab = train.vocab;
  a.stats = cfg.stats.empty() ? spatial::fit_stats(train, spatial::stats_mode_from_string(cfg.stats_mode))
                              : spatial::load_stats(cfg.stats);
  spatial::check_stats_cover(a.stats, a.vocab);
  const auto provider = make_provider(cfg, a.vocab);
  a.semantic = semantic::embed_all_pairs(*provider, a.vocab.num_pairs());
  a.semantic_kind = provider->kind();
  return a;
}

/// Image geometry of the model follows the training images.
inline void fit_model_to_data(TrainConfig& cfg, const data::Dataset& train) {
  if (train.images.empty()) return;
  const auto& img = train.images.front().image;
  cfg.model.image_height = img.height;
  cfg.model.image_width = img.width;
  cfg.model.channels = img.channels;
  for (const auto& a : train.images)
    if (a.image.height != img.height || a.image.width != img.width || a.image.channels != img.channels)
      throw ValidationError("training images must share one size; '" + a.id + "' differs");
}

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0, box = 0, giou = 0, obj = 0, hoi = 0, oa = 0;
  double grad_norm = 0.0;

  nlohmann::json to_json() const {
    return {{"type", "step"}, {"step", step}, {"epoch", epoch}, {"lr", lr},
            {"loss", {{"total", total}, {"box", box}, {"giou", giou}, {"obj", obj}, {"hoi", hoi}, {"oa", oa}}},
            {"grad_norm", grad_norm}};
  }
};

inline bool is_backbone_param(const std::string& name) { return name.rfind("backbone.", 0) == 0; }

/// Step-granular trainer; its full state round-trips through `checkpoint()`.
class Trainer {
 public:
  Trainer(TrainConfig cfg, data::Dataset train, ModelAssets assets)
      : cfg_(prepare(std::move(cfg), train)),
        train_(std::move(train)),
        model_(cfg_.model, std::move(assets), cfg_.seed),
        opt_(model_.params(), {0.9, 0.999, 1e-8, cfg_.weight_decay}) {
    groups_.reserve(train_.images.size());
    for (const auto& img : train_.images) {
      groups_.push_back(data::group_instances(img));
      if (groups_.back().size() > cfg_.model.num_queries)
        throw ValidationError("image '" + img.id + "' has more instances than queries");
      oa_targets_.push_back(data::gt_oa_targets(img, train_.vocab));
      gt_pairs_.push_back(data::gt_pairs(img, train_.vocab));
    }
  }

  /// Resumes from a checkpoint written by `checkpoint()`.
  Trainer(const nn::Checkpoint<Scalar>& ck, data::Dataset train)
      : Trainer(TrainConfig::from_json(parse_metadata(ck).at("train_config")), std::move(train),
                ModelAssets::from_json(parse_metadata(ck).at("assets"))) {
    const auto meta = parse_metadata(ck);
    nn::load_parameters(ck, model_.params());
    opt_.load(ck, meta.at("optimizer_steps").get<std::size_t>());
    step_ = meta.at("step").get<std::size_t>();
  }

  // The optimizer holds a pointer into the model's parameter store.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const data::Dataset& data() const { return train_; }

  std::size_t steps_per_epoch() const {
    return train_.images.empty() ? 0 : (train_.images.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  }
  std::size_t total_steps() const {
    const std::size_t all = steps_per_epoch() * cfg_.epochs;
    return cfg_.max_steps ? std::min(all, cfg_.max_steps) : all;
  }
  std::size_t step_count() const { return step_; }
  bool done() const { return step_ >= total_steps(); }
  std::size_t epoch() const { return steps_per_epoch() ? step_ / steps_per_epoch() : 0; }

  std::size_t drop_interval() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg_.lr_drop_fraction * cfg_.epochs)));
  }
  double learning_rate(std::size_t epoch) const {
    return cfg_.lr * std::pow(cfg_.lr_drop_factor, static_cast<double>(epoch / drop_interval()));
  }

  /// Image order of an epoch, a fixed function of (seed, epoch).
  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(train_.images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(cfg_.seed, epoch + 0x5eed));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  /// Sampler seed for an image at the current step.
  std::uint64_t spatial_seed(std::size_t image) const {
    const std::uint64_t base = image_seed(train_.images[image].id);
    return cfg_.spatial_resample ? mix_seed(mix_seed(cfg_.seed, step_), base) : base;
  }

  StepRecord step() {
    if (done()) throw RuntimeFailure("training already finished");
    const std::size_t spe = steps_per_epoch();
    const std::size_t ep = step_ / spe;
    const std::size_t b = step_ % spe;
    const auto order = epoch_order(ep);
    const std::size_t begin = b * cfg_.batch_size;
    const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
    const Scalar inv = Scalar{1} / static_cast<Scalar>(end - begin);

    model_.params().zero_grad();
    StepRecord rec;
    rec.step = step_;
    rec.epoch = ep;
    rec.lr = learning_rate(ep);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t idx = order[i];
      nn::Tape<Scalar> tape(true);
      ForwardOptions fo{spatial_seed(idx), std::nullopt};
      if (cfg_.oracle_oa) fo.oracle_pairs = gt_pairs_[idx];
      const auto fr = model_.forward(tape, train_.images[idx].image, fo);
      const auto loss = matched_loss(fr.heads, fr.oa_logits, groups_[idx], oa_targets_[idx], cfg_.loss);
      tape.backward(loss.total, inv);
      const double w = 1.0 / static_cast<double>(end - begin);
      rec.total += w * loss.total_value;
      rec.box += w * loss.box;
      rec.giou += w * loss.giou;
      rec.obj += w * loss.obj;
      rec.hoi += w * loss.hoi;
      rec.oa += w * loss.oa;
    }
    rec.grad_norm = clip_grad_norm(model_.params(), cfg_.grad_clip);
    const double lr = rec.lr, bb = rec.lr * cfg_.backbone_lr_mult;
    opt_.step([&](const std::string& name) { return is_backbone_param(name) ? bb : lr; });
    ++step_;
    return rec;
  }

  nn::Checkpoint<Scalar> checkpoint() const {
    nn::Checkpoint<Scalar> ck;
    ck.config_hash = nn::fnv1a64(model_.config().to_json().dump());
    const nlohmann::json meta = {{"format", "ssrt-checkpoint"},
                                 {"train_config", cfg_.to_json()},
                                 {"model_config", model_.config().to_json()},
                                 {"assets", model_.assets().to_json()},
                                 {"step", step_},
                                 {"epoch", epoch()},
                                 {"optimizer_steps", opt_.steps()}};
    ck.metadata = meta.dump();
    nn::add_parameters(ck, model_.params());
    opt_.save(ck);
    return ck;
  }

  static nlohmann::json parse_metadata(const nn::Checkpoint<Scalar>& ck) {
    try {
      return nlohmann::json::parse(ck.metadata);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("checkpoint metadata: ") + e.what());
    }
  }

 private:
  static TrainConfig prepare(TrainConfig cfg, const data::Dataset& train) {
    fit_model_to_data(cfg, train);
    cfg.validate();
    return cfg;
  }

  TrainConfig cfg_;
  data::Dataset train_;
  Model model_;
  AdamW<Scalar> opt_;
  std::vector<std::vector<data::TargetGroup>> groups_;
  std::vector<std::vector<double>> oa_targets_;
  std::vector<std::vector<std::size_t>> gt_pairs_;
  std::size_t step_ = 0;
};

/// Rebuilds a model (architecture, assets and weights) from a checkpoint.
inline Model load_model(const nn::Checkpoint<Scalar>& ck) {
  const auto meta = Trainer::parse_metadata(ck);
  try {
    Model m(ModelConfig::from_json(meta.at("model_config")), ModelAssets::from_json(meta.at("assets")), 0);
    if (ck.config_hash != nn::fnv1a64(m.config().to_json().dump()))
      throw ValidationError("checkpoint config hash does not match its metadata");
    nn::load_parameters(ck, m.params());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint metadata: ") + e.what());
  }
}

inline Model load_model(const std::string& path) { return load_model(nn::read_checkpoint<Scalar>(path)); }

/// Detections of every image, using the fixed per-image sampler seed.
template <class T>
std::vector<eval::Detection> predict_dataset(const SSRTModel<T>& model, const data::Dataset& ds, bool oracle = false) {
  std::vector<eval::Detection> dets;
  for (const auto& img : ds.images) {
    auto d = eval::detections_from_predictions(img.id, model.predict(img, oracle));
    dets.insert(dets.end(), d.begin(), d.end());
  }
  return dets;
}

template <class T>
eval::EvalReport evaluate_model(const SSRTModel<T>& model, const data::Dataset& ds, const eval::EvalConfig& ec,
                                bool oracle = false) {
  return eval::evaluate(predict_dataset(model, ds, oracle), ds, ec);
}

struct RunResult {
  std::size_t steps = 0;
  double final_map = 0.0;
  double best_map = -1.0;
  std::vector<StepRecord> trace;
};

/// Full training run. With `out_dir` set, writes config.json, metrics.jsonl and the
/// init, best and final checkpoints there.
inline RunResult run_training(Trainer& trainer, const std::optional<std::filesystem::path>& out_dir,
                              const std::function<void(const nlohmann::json&)>& on_record = {}) {
  RunResult res;
  std::ofstream metrics;
  auto emit = [&](const nlohmann::json& j) {
    if (metrics.is_open()) metrics << j.dump() << "\n" << std::flush;
    if (on_record) on_record(j);
  };
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream(*out_dir / "config.json") << trainer.config().to_json().dump(2) << "\n";
    metrics.open(*out_dir / "metrics.jsonl");
    if (!metrics) throw RuntimeFailure("cannot write metrics log in " + out_dir->string());
    nn::write_checkpoint((*out_dir / "checkpoint_init.ckpt").string(), trainer.checkpoint());
  }
  const auto& cfg = trainer.config();
  const eval::EvalConfig ec{eval::Scenario::Relaxed, eval::ClassMode::Action, std::nullopt};
  StepRecord sum;
  std::size_t n_in_epoch = 0;
  while (!trainer.done()) {
    const StepRecord r = trainer.step();
    emit(r.to_json());
    res.trace.push_back(r);
    sum.total += r.total, sum.box += r.box, sum.giou += r.giou;
    sum.obj += r.obj, sum.hoi += r.hoi, sum.oa += r.oa;
    ++n_in_epoch;
    const bool epoch_end = trainer.step_count() % trainer.steps_per_epoch() == 0 || trainer.done();
    if (!epoch_end) continue;
    const double k = static_cast<double>(n_in_epoch);
    nlohmann::json ej = {{"type", "epoch"},
                         {"epoch", r.epoch},
                         {"step", trainer.step_count()},
                         {"loss",
                          {{"total", sum.total / k},
                           {"box", sum.box / k},
                           {"giou", sum.giou / k},
                           {"obj", sum.obj / k},
                           {"hoi", sum.hoi / k},
                           {"oa", sum.oa / k}}}};
    const bool do_eval = trainer.done() || (cfg.eval_every > 0 && (r.epoch + 1) % cfg.eval_every == 0);
    if (do_eval) {
      const double m = evaluate_model(trainer.model(), trainer.data(), ec, cfg.oracle_oa).map;
      ej["train_map"] = m;
      res.final_map = m;
      if (m > res.best_map) {
        res.best_map = m;
        if (out_dir) nn::write_checkpoint((*out_dir / "checkpoint_best.ckpt").string(), trainer.checkpoint());
      }
    }
    emit(ej);
    sum = StepRecord{};
    n_in_epoch = 0;
  }
  res.steps = trainer.step_count();
  if (out_dir) nn::write_checkpoint((*out_dir / "checkpoint_final.ckpt").string(), trainer.checkpoint());
  return res;
}

}  // namespace ssrt::train
