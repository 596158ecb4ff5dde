// Command-line front end: synth, fit-stats, embed, train, eval, dump-attn, ablate.
// Exit codes: 0 success, 2 configuration/validation error, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssrt/data/dataset.hpp"
#include "ssrt/data/synth.hpp"
#include "ssrt/error.hpp"
#include "ssrt/eval/eval.hpp"
#include "ssrt/semantic/providers.hpp"
#include "ssrt/spatial/stats.hpp"
#include "ssrt/train/attention_dump.hpp"
#include "ssrt/train/config.hpp"
#include "ssrt/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssrt;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

data::OAVocabulary load_vocabulary(const std::string& path) {
  if (path.empty()) return data::OAVocabulary::default_synthetic();
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open vocabulary: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("vocabulary parse error: " + std::string(e.what()));
  }
  // A dataset document carries its vocabulary under "vocabulary".
  return data::OAVocabulary::from_json(j.contains("vocabulary") ? j.at("vocabulary") : j);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t n_images = 50;
  std::size_t image_size = 32;
  bool external = false;
  std::string vocab;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const auto vocab = load_vocabulary(a.vocab);
  data::SynthConfig sc;
  sc.image_size = a.image_size;
  sc.external_images = a.external;
  const auto ds = data::synth_dataset(a.seed, a.n_images, vocab, data::default_layout_stats(vocab), sc);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  data::save_dataset(ds, a.out);
  std::size_t n = 0;
  for (const auto& img : ds.images) n += img.hois.size();
  std::cout << "wrote " << ds.images.size() << " images, " << n << " instances to " << a.out << "\n";
  return 0;
}

struct FitArgs {
  std::string data, mode = "bivariate", out;
  double epsilon = 1e-4;
};

int run_fit_stats(const FitArgs& a) {
  const auto ds = data::load_dataset(a.data);
  const auto st = spatial::fit_stats(ds, spatial::stats_mode_from_string(a.mode), a.epsilon);
  spatial::save_stats(st, a.out);
  std::size_t fallback = 0;
  for (std::size_t p = 0; p < st.pairs.size(); ++p) fallback += st.uses_fallback(p);
  std::cout << "fitted " << st.pairs.size() << " pairs (" << fallback << " on fallback) to " << a.out << "\n";
  return 0;
}

struct EmbedArgs {
  std::string provider = "one-hot", table, endpoint, mode = "oa", vocab, out;
  double timeout = 10.0;
  std::size_t max_batch = 32;
};

int run_embed(const EmbedArgs& a) {
  const auto vocab = load_vocabulary(a.vocab);
  const auto mode = semantic::template_mode_from_string(a.mode);
  std::unique_ptr<semantic::SemanticProvider> p;
  if (a.provider == "one-hot") {
    p = std::make_unique<semantic::OneHotProvider>(vocab.num_pairs());
  } else if (a.provider == "table") {
    if (a.table.empty()) throw ValidationError("--table is required for the table provider");
    p = std::make_unique<semantic::TableProvider>(semantic::load_embedding_table(a.table), vocab);
  } else if (a.provider == "remote") {
    if (a.endpoint.empty()) throw ValidationError("--endpoint is required for the remote provider");
    semantic::RemoteConfig rc{a.endpoint, a.timeout, a.max_batch};
    p = std::make_unique<semantic::RemoteProvider>(std::make_shared<semantic::TextEncoderClient>(rc), vocab, mode);
  } else {
    throw ValidationError("unknown provider '" + a.provider + "'");
  }
  const auto table = semantic::to_table(*p, vocab);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  semantic::save_embedding_table(table, a.out);
  std::cout << "wrote " << table.entries.size() << " embeddings of width " << table.dim << " to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, out, resume;
  std::vector<std::string> sets;
  std::map<std::string, std::string> model_flags;
};

int run_train(const TrainArgs& a) {
  nlohmann::json file = a.config.empty() ? nlohmann::json::object() : train::read_config_file(a.config);
  auto sets = parse_sets(a.sets);
  for (const auto& [k, v] : a.model_flags)
    if (!v.empty()) sets.emplace_back("model." + k, v);
  const auto report = [](const nlohmann::json& j) {
    if (j.at("type") != "epoch") return;
    std::cout << "epoch " << j.at("epoch") << " step " << j.at("step") << " loss " << j.at("loss").at("total");
    if (j.contains("train_map")) std::cout << " train mAP " << j.at("train_map");
    std::cout << std::endl;
  };
  if (!a.resume.empty()) {
    const auto ck = nn::read_checkpoint<train::Scalar>(a.resume);
    const auto meta = train::Trainer::parse_metadata(ck);
    const std::string data_path = meta.at("train_config").at("train_data").get<std::string>();
    train::Trainer t(ck, data::load_dataset(data_path));
    const auto r = train::run_training(t, fs::path(a.out), report);
    std::cout << "resumed to step " << r.steps << ", final train mAP " << r.final_map << "\n";
    return 0;
  }
  const auto cfg = train::resolve_config(file, sets);
  if (cfg.train_data.empty()) throw ValidationError("train_data is not set");
  const auto ds = data::load_dataset(cfg.train_data);
  train::Trainer t(cfg, ds, train::build_assets(cfg, ds));
  const auto r = train::run_training(t, fs::path(a.out), report);
  std::cout << "trained " << r.steps << " steps, final train mAP " << r.final_map << ", best " << r.best_map << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, predictions, train_data, report, dump;
  int scenario = 2;
  std::string class_mode = "action";
  bool oracle = false;
};

int run_eval(const EvalArgs& a) {
  const auto ds = data::load_dataset(a.data);
  eval::EvalConfig ec;
  ec.scenario = eval::scenario_from_int(a.scenario);
  ec.class_mode = eval::class_mode_from_string(a.class_mode);
  if (!a.train_data.empty()) ec.train_pair_counts = eval::pair_counts(data::load_dataset(a.train_data));

  std::vector<eval::Detection> dets;
  nlohmann::json dump = nlohmann::json::array();
  if (!a.predictions.empty()) {
    std::ifstream is(a.predictions);
    if (!is) throw ValidationError("cannot open predictions: " + a.predictions);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("predictions parse error: " + std::string(e.what()));
    }
    for (const auto& img : j) {
      const auto ps = prediction_set_from_dump(img);
      const auto d = eval::detections_from_predictions(img.at("image_id").get<std::string>(), ps);
      dets.insert(dets.end(), d.begin(), d.end());
    }
  } else {
    if (a.checkpoint.empty()) throw ValidationError("either --checkpoint or --predictions is required");
    const auto model = train::load_model(a.checkpoint);
    if (model.assets().vocab != ds.vocab) throw ValidationError("dataset vocabulary differs from the checkpoint's");
    for (const auto& img : ds.images) {
      const auto ps = model.predict(img, a.oracle);
      if (!a.dump.empty()) dump.push_back(prediction_dump(img.id, ps));
      const auto d = eval::detections_from_predictions(img.id, ps);
      dets.insert(dets.end(), d.begin(), d.end());
    }
  }
  const auto rep = eval::evaluate(dets, ds, ec);
  if (!a.report.empty()) {
    if (fs::path(a.report).has_parent_path()) fs::create_directories(fs::path(a.report).parent_path());
    eval::write_report(rep, a.report);
  }
  if (!a.dump.empty()) write_json(a.dump, dump);
  std::cout << "scenario " << a.scenario << " " << a.class_mode << "-level mAP " << rep.map;
  if (rep.map_rare) std::cout << " rare " << *rep.map_rare;
  if (rep.map_non_rare) std::cout << " non-rare " << *rep.map_non_rare;
  std::cout << "\n";
  return 0;
}

struct DumpArgs {
  std::string checkpoint, image_id, data, out;
};

int run_dump_attn(const DumpArgs& a) {
  const auto ck = nn::read_checkpoint<train::Scalar>(a.checkpoint);
  const auto model = train::load_model(ck);
  std::string data_path = a.data;
  if (data_path.empty())
    data_path = train::Trainer::parse_metadata(ck).at("train_config").at("train_data").get<std::string>();
  if (data_path.empty()) throw ValidationError("no dataset given and the checkpoint records none");
  const auto ds = data::load_dataset(data_path);
  const auto* img = ds.find(a.image_id);
  if (!img) throw ValidationError("image '" + a.image_id + "' not found in " + data_path);
  const auto d = train::collect_attention(model, *img);
  train::write_attention(d, model.assets().vocab, a.out);
  std::cout << "wrote " << d.decoder.size() << " attention grids of " << d.grid_height << "x" << d.grid_width << " to "
            << a.out << "\n";
  return 0;
}

struct AblateArgs {
  std::string grid, out;
};

std::string scalar_text(const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

/// Grid file: {"base": {...train config...}, "axes": {"key": [values...]}, "seeds": [..],
/// "scenario": 2, "class_mode": "action", "eval_data": optional path}.
int run_ablate(const AblateArgs& a) {
  nlohmann::json grid = train::read_config_file(a.grid);
  const auto base_dir = fs::path(a.grid).parent_path();
  nlohmann::json base = grid.value("base", nlohmann::json::object());
  for (const char* k : {"train_data", "stats", "embeddings"})
    if (base.contains(k) && base[k].is_string() && !base[k].get<std::string>().empty() &&
        fs::path(base[k].get<std::string>()).is_relative())
      base[k] = (base_dir / base[k].get<std::string>()).lexically_normal().string();
  const auto axes = grid.value("axes", nlohmann::json::object());
  const auto seeds = grid.value("seeds", std::vector<std::uint64_t>{0});
  eval::EvalConfig ec;
  ec.scenario = eval::scenario_from_int(grid.value("scenario", 2));
  ec.class_mode = eval::class_mode_from_string(grid.value("class_mode", std::string("action")));

  std::vector<std::string> keys;
  std::vector<std::vector<std::string>> values;
  for (auto it = axes.begin(); it != axes.end(); ++it) {
    keys.push_back(it.key());
    values.emplace_back();
    for (const auto& v : *it) values.back().push_back(scalar_text(v));
    if (values.back().empty()) throw ValidationError("ablation axis '" + it.key() + "' has no values");
  }
  const fs::path out = a.out.empty() ? base_dir / "ablation" : fs::path(a.out);
  fs::create_directories(out);
  std::ofstream csv(out / "ablation.csv");
  for (const auto& k : keys) csv << k << ",";
  csv << "seed_maps,mean_map\n";

  std::vector<std::size_t> idx(keys.size(), 0);
  while (true) {
    std::vector<std::pair<std::string, std::string>> sets;
    for (std::size_t i = 0; i < keys.size(); ++i) sets.emplace_back(keys[i], values[i][idx[i]]);
    std::vector<double> maps;
    for (auto seed : seeds) {
      auto s = sets;
      s.emplace_back("seed", std::to_string(seed));
      const auto cfg = train::resolve_config(base, s);
      if (cfg.train_data.empty()) throw ValidationError("ablation base config has no train_data");
      const auto ds = data::load_dataset(cfg.train_data);
      train::Trainer t(cfg, ds, train::build_assets(cfg, ds));
      train::run_training(t, std::nullopt);
      const auto eval_ds =
          grid.contains("eval_data") ? data::load_dataset((base_dir / grid["eval_data"].get<std::string>()).string()) : ds;
      maps.push_back(train::evaluate_model(t.model(), eval_ds, ec, cfg.oracle_oa).map);
    }
    double mean = 0.0;
    for (double m : maps) mean += m / static_cast<double>(maps.size());
    std::string seeds_text;
    for (double m : maps) seeds_text += (seeds_text.empty() ? "" : " ") + std::to_string(m);
    for (const auto& [k, v] : sets) {
      csv << v << ",";
      std::cout << k << "=" << v << " ";
    }
    csv << seeds_text << "," << mean << "\n" << std::flush;
    std::cout << "mAP " << mean << "\n";

    std::size_t d = 0;
    while (d < idx.size() && ++idx[d] == values[d].size()) idx[d++] = 0;
    if (d == idx.size()) break;
  }
  std::cout << "wrote " << (out / "ablation.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-object interaction detection with support-feature query refinement"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic HOI dataset");
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_option("--n-images", sa.n_images, "Number of images");
  synth->add_option("--image-size", sa.image_size, "Square image side in pixels");
  synth->add_flag("--external-images", sa.external, "Write PPM files instead of inline pixels");
  synth->add_option("--vocab", sa.vocab, "Vocabulary JSON (default: built-in synthetic vocabulary)");
  synth->add_option("--out", sa.out, "Output dataset JSON")->required();

  FitArgs fa;
  auto* fit = app.add_subcommand("fit-stats", "Fit per-pair spatial statistics");
  fit->add_option("--data", fa.data, "Training dataset JSON")->required();
  fit->add_option("--mode", fa.mode, "bivariate or multivariate")->check(CLI::IsMember({"bivariate", "multivariate"}));
  fit->add_option("--epsilon", fa.epsilon, "Covariance regularizer");
  fit->add_option("--out", fa.out, "Output stats JSON")->required();

  EmbedArgs ea;
  auto* embed = app.add_subcommand("embed", "Write the semantic embedding of every OA pair");
  embed->add_option("--provider", ea.provider, "one-hot, table or remote")
      ->check(CLI::IsMember({"one-hot", "table", "remote"}));
  embed->add_option("--table", ea.table, "Embeddings file for the table provider");
  embed->add_option("--endpoint", ea.endpoint, "Text-encoder base URL for the remote provider");
  embed->add_option("--mode", ea.mode, "Sentence template: oa or action-only")
      ->check(CLI::IsMember({"oa", "action-only"}));
  embed->add_option("--timeout", ea.timeout, "Remote request timeout in seconds");
  embed->add_option("--max-batch", ea.max_batch, "Sentences per remote request");
  embed->add_option("--vocab", ea.vocab, "Vocabulary or dataset JSON (default: built-in vocabulary)");
  embed->add_option("--out", ea.out, "Output embeddings JSON")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", ta.config, "Training config JSON");
  trn->add_option("--out", ta.out, "Output directory")->required();
  trn->add_option("--set", ta.sets, "Override a config key, e.g. --set model.k=2 (repeatable)");
  trn->add_option("--resume", ta.resume, "Continue from a checkpoint written by train");
  for (const auto& key : train::config_keys(ModelConfig{}.to_json())) {
    ta.model_flags[key];
    trn->add_option("--" + key, ta.model_flags[key], "Model config override")->group("Model");
  }

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "Evaluate mAP");
  ev->add_option("--checkpoint", va.checkpoint, "Model checkpoint");
  ev->add_option("--predictions", va.predictions, "Prediction dump JSON instead of a checkpoint");
  ev->add_option("--data", va.data, "Evaluation dataset JSON")->required();
  ev->add_option("--train-data", va.train_data, "Training dataset for the rare/non-rare split");
  ev->add_option("--scenario", va.scenario, "1 (strict) or 2 (relaxed)")->check(CLI::IsMember({1, 2}));
  ev->add_option("--class-mode", va.class_mode, "action or pair")->check(CLI::IsMember({"action", "pair"}));
  ev->add_option("--report", va.report, "Report JSON (a CSV is written next to it)");
  ev->add_option("--dump-predictions", va.dump, "Write the per-query prediction dump");
  ev->add_flag("--oracle-oa", va.oracle, "Feed ground-truth OA pairs to the support branch");

  DumpArgs da;
  auto* dump = app.add_subcommand("dump-attn", "Write decoder and refiner attention maps of one image");
  dump->add_option("--checkpoint", da.checkpoint, "Model checkpoint")->required();
  dump->add_option("--image-id", da.image_id, "Image id")->required();
  dump->add_option("--data", da.data, "Dataset JSON (default: the checkpoint's training data)");
  dump->add_option("--out", da.out, "Output directory")->required();

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Train and evaluate a grid of configurations");
  abl->add_option("--grid", aa.grid, "Grid JSON")->required();
  abl->add_option("--out", aa.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*fit) return run_fit_stats(fa);
    if (*embed) return run_embed(ea);
    if (*trn) return run_train(ta);
    if (*ev) return run_eval(va);
    if (*dump) return run_dump_attn(da);
    if (*abl) return run_ablate(aa);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
