// scriptid command-line tool.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric fault (including a
// failed gradient check). Results go to stdout as one JSON object per line; progress
// goes to stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scriptid/checkpoint.hpp"
#include "scriptid/config_file.hpp"
#include "scriptid/dataset.hpp"
#include "scriptid/gradcheck.hpp"
#include "scriptid/image.hpp"
#include "scriptid/kernels.hpp"
#include "scriptid/render.hpp"
#include "scriptid/synth.hpp"
#include "scriptid/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace scriptid;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SynthArgs {
  std::string out;
  int classes = 3;
  int per_class = 10;
  int min_width = 60, max_width = 300, min_height = 30, max_height = 60;
  double noise = 0.06;
  int channels = 3;
};

struct TrainArgs {
  std::string manifest, val_manifest, out, metrics, resume;
  int classes = 0;
  int iters = 20000;
  int batch = 32;
  double lr = 0.001;
  double weight_decay = 5e-4;
  double clip = 5.0;
  int max_patches = kDefaultMaxPatches;
  std::string variant = "full";
  std::string arch = "standard";
  int channels = 3;
  bool augment = false;
  bool no_dropout = false;
  int eval_every = 0;
};

struct EvalArgs {
  std::string model, manifest;
  int max_patches = kDefaultMaxPatches;
};

struct PredictArgs {
  std::string model;
  std::vector<std::string> images;
  int max_patches = kDefaultMaxPatches;
  bool per_patch = false;
};

struct AttnArgs {
  std::string model, image, out;
  int max_patches = kDefaultMaxPatches;
};

struct GradArgs {
  std::string variant = "full";
  std::string arch = "tiny";
  int samples = 200;
  double tolerance = 1e-3;
  bool modules = false;
};

void out_line(const json& j) { std::cout << j.dump() << std::endl; }
void log_line(const std::string& s) { std::cerr << s << std::endl; }

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError("missing required option " + flag);
}

// Config-file values fill options that were not given on the command line. Keys that
// name an option of another subcommand are ignored; unknown keys are rejected.
void apply_config(CLI::App& app, CLI::App* sub, const ConfigMap& cfg) {
  for (const auto& [key, value] : cfg) {
    const std::string flag = "--" + key;
    CLI::Option* opt = sub ? sub->get_option_no_throw(flag) : nullptr;
    if (!opt) opt = app.get_option_no_throw(flag);
    if (!opt) {
      bool elsewhere = false;
      for (auto* other : app.get_subcommands({})) elsewhere = elsewhere || other->get_option_no_throw(flag);
      if (!elsewhere) throw UsageError("unknown config key '" + key + "'");
      continue;
    }
    if (key == "config" || opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

std::vector<std::string> class_table_for(const DatasetManifest& m, int expected) {
  if (expected > 0 && static_cast<int>(m.class_table.size()) != expected) {
    throw InvalidInput("manifest has " + std::to_string(m.class_table.size()) + " classes, --classes says " +
                       std::to_string(expected));
  }
  return m.class_table;
}

json eval_json(const EvalResult& r, const std::vector<std::string>& classes) {
  json per = json::object();
  for (size_t k = 0; k < classes.size(); ++k) per[classes[k]] = r.per_class_accuracy[k];
  return {{"accuracy", r.accuracy}, {"loss", r.loss}, {"samples", r.samples}, {"per_class_accuracy", per},
          {"confusion", r.confusion}, {"classes", classes}};
}

json report_json(const GradCheckReport& r) {
  json worst = json::array();
  for (const auto& e : r.worst(5)) {
    worst.push_back({{"tensor", e.tensor}, {"index", e.index}, {"analytic", e.analytic}, {"numeric", e.numeric},
                     {"rel_error", e.rel_error}});
  }
  return {{"scope", r.scope},
          {"pass", r.pass},
          {"probes", r.entries.size()},
          {"tensors", r.tensors_covered()},
          {"max_rel_error", r.max_rel_error},
          {"tolerance", r.tolerance},
          {"worst", worst}};
}

LabeledSample sample_from_image(const std::string& path, int channels) {
  return make_sample(load_image(path, channels), path, -1);
}

int run_synth(const Globals& g, const SynthArgs& a) {
  require(a.out, "--out");
  SynthSpec spec;
  spec.n_classes = a.classes;
  spec.samples_per_class = a.per_class;
  spec.min_width = a.min_width;
  spec.max_width = a.max_width;
  spec.min_height = a.min_height;
  spec.max_height = a.max_height;
  spec.noise = a.noise;
  spec.channels = a.channels;
  spec.seed = g.seed;
  const auto m = generate_synthetic(spec, a.out);
  out_line({{"command", "synth-data"},
            {"images", m.records.size()},
            {"classes", m.class_table},
            {"manifest", (fs::path(a.out) / "manifest.tsv").string()}});
  return 0;
}

int run_train(const Globals& g, const TrainArgs& a) {
  require(a.manifest, "--manifest");
  require(a.out, "--out");
  const DatasetManifest m = load_manifest(a.manifest);
  const auto classes = class_table_for(m, a.classes);

  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch;
  cfg.max_iterations = a.iters;
  cfg.weight_decay = a.weight_decay;
  cfg.clip_norm = a.clip;
  cfg.max_patches = a.max_patches;
  cfg.seed = g.seed;
  cfg.variant = parse_variant(a.variant);
  cfg.arch = a.arch;
  cfg.augment = a.augment;
  cfg.dropout = !a.no_dropout;
  cfg.eval_every = a.eval_every;
  cfg.threads = g.threads;
  cfg.validate();

  log_line("loading " + std::to_string(m.records.size()) + " training images");
  const auto train_set = load_samples(m, classes, a.channels);
  std::vector<LabeledSample> val_set;
  if (!a.val_manifest.empty()) val_set = load_samples(load_manifest(a.val_manifest), classes, a.channels);

  std::optional<Checkpoint> resume;
  TrainHooks hooks;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume, static_cast<int>(classes.size()));
    if (resume->meta.class_table != classes) throw InvalidInput("resume checkpoint has a different class table");
    hooks.initial = &resume->params;
    if (resume->adam) hooks.initial_adam = &*resume->adam;
    hooks.start_iteration = resume->meta.iteration;
  }

  const std::string metrics_path = a.metrics.empty() ? a.out + ".metrics.jsonl" : a.metrics;
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics log " + metrics_path);
  hooks.metrics = [&](const std::string& line) { metrics << line << '\n'; };
  hooks.progress = log_line;

  const TrainResult r = train(train_set, val_set, static_cast<int>(classes.size()), a.channels, cfg, hooks);
  metrics.close();
  save_checkpoint(a.out, r.params, CheckpointMetadata{classes, cfg, r.iterations}, &r.adam);

  json out = {{"command", "train"},
              {"checkpoint", a.out},
              {"metrics", metrics_path},
              {"iterations", r.iterations},
              {"parameters", r.params.parameter_count()},
              {"final_loss", r.final_loss},
              {"train_accuracy", r.train_eval.accuracy}};
  if (!val_set.empty()) out["validation_accuracy"] = r.validation_eval.accuracy;
  out_line(out);
  return 0;
}

int run_eval(const Globals& g, const EvalArgs& a) {
  require(a.model, "--model");
  require(a.manifest, "--manifest");
  set_num_threads(g.threads);
  Checkpoint ck = load_checkpoint(a.model);
  const DatasetManifest m = load_manifest(a.manifest);
  const auto samples = load_samples(m, ck.meta.class_table, ck.params.dims.channels);
  const EvalResult r = evaluate(ck.params, samples, EvalOptions{a.max_patches, g.seed, 32});
  json out = eval_json(r, ck.meta.class_table);
  out["command"] = "eval";
  out_line(out);
  return 0;
}

int run_predict(const Globals& g, const PredictArgs& a) {
  require(a.model, "--model");
  if (a.images.empty()) throw UsageError("missing required option --image");
  set_num_threads(g.threads);
  Checkpoint ck = load_checkpoint(a.model);
  for (const auto& path : a.images) {
    const Prediction p = predict(ck.params, sample_from_image(path, ck.params.dims.channels), a.max_patches, g.seed);
    const auto& z = p.trace.dist.z;
    const int k = argmax_class(z);
    json line = {{"image", path},
                 {"class", ck.meta.class_table[k]},
                 {"class_index", k},
                 {"z", std::vector<float>(z.data(), z.data() + z.size())}};
    if (a.per_patch) {
      json rows = json::array();
      const auto& pp = p.trace.dist.per_patch;
      for (Index d = 0; d < pp.rows(); ++d) {
        rows.push_back({{"x", p.patches.patches[d].origin_x},
                        {"y", p.patches.patches[d].origin_y},
                        {"p", p.trace.weights.p(d)},
                        {"dist", std::vector<float>(pp.row(d).data(), pp.row(d).data() + pp.cols())}});
      }
      line["per_patch"] = rows;
    }
    out_line(line);
  }
  return 0;
}

int run_attn_map(const Globals& g, const AttnArgs& a) {
  require(a.model, "--model");
  require(a.image, "--image");
  require(a.out, "--out");
  set_num_threads(g.threads);
  Checkpoint ck = load_checkpoint(a.model);
  const LabeledSample s = sample_from_image(a.image, ck.params.dims.channels);
  const Prediction p = predict(ck.params, s, a.max_patches, g.seed);
  const auto& pv = p.trace.weights.p;
  const std::vector<double> weights(pv.data(), pv.data() + pv.size());
  save_image(render_attention_map(s.image.height, s.image.width, p.patches, weights), a.out);
  out_line({{"command", "attn-map"},
            {"image", a.image},
            {"out", a.out},
            {"height", s.image.height},
            {"width", s.image.width},
            {"class", ck.meta.class_table[argmax_class(p.trace.dist.z)]},
            {"p", weights}});
  return 0;
}

int run_gradcheck(const Globals& g, const GradArgs& a) {
  set_num_threads(g.threads);
  GradCheckConfig cfg;
  cfg.seed = g.seed;
  cfg.variant = parse_variant(a.variant);
  cfg.arch = a.arch;
  cfg.min_samples = a.samples;
  cfg.tolerance = a.tolerance;
  std::vector<GradCheckReport> reports{gradient_check(cfg)};
  if (a.modules) {
    reports.push_back(check_encoder_gradients(g.seed, a.samples));
    reports.push_back(check_lstm_gradients(g.seed, a.samples));
    reports.push_back(check_attention_gradients(g.seed, a.samples));
    reports.push_back(check_fusion_gradients(g.seed, a.samples));
  }
  bool pass = true;
  for (const auto& r : reports) {
    out_line(report_json(r));
    log_line(r.scope + (r.pass ? " PASS" : " FAIL") + " max rel error " + std::to_string(r.max_rel_error));
    pass = pass && r.pass;
  }
  return pass ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based convolutional-LSTM script identification"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key=value file; command-line flags win");
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--threads", g.threads, "worker threads (1 = bit-reproducible)")->check(CLI::PositiveNumber);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic multi-script corpus");
  synth->add_option("--out", sa.out, "output directory");
  synth->add_option("--classes", sa.classes, "number of classes");
  synth->add_option("--per-class", sa.per_class, "images per class");
  synth->add_option("--min-width", sa.min_width);
  synth->add_option("--max-width", sa.max_width);
  synth->add_option("--min-height", sa.min_height);
  synth->add_option("--max-height", sa.max_height);
  synth->add_option("--noise", sa.noise, "Gaussian noise sigma (fraction of full scale)");
  synth->add_option("--channels", sa.channels)->check(CLI::IsMember({1, 3}));

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train a model");
  trn->add_option("--manifest", ta.manifest, "training manifest (TSV)");
  trn->add_option("--val-manifest", ta.val_manifest, "validation manifest");
  trn->add_option("--classes", ta.classes, "expected class count");
  trn->add_option("--iters", ta.iters, "Adam steps");
  trn->add_option("--batch", ta.batch, "batch size");
  trn->add_option("--lr", ta.lr, "learning rate");
  trn->add_option("--weight-decay", ta.weight_decay, "L2 penalty on weights");
  trn->add_option("--clip", ta.clip, "global gradient-norm clip");
  trn->add_option("--max-patches", ta.max_patches, "patch cap per image");
  trn->add_option("--variant", ta.variant, "full | variant1 | variant2");
  trn->add_option("--arch", ta.arch, "standard | desk | tiny");
  trn->add_option("--channels", ta.channels)->check(CLI::IsMember({1, 3}));
  trn->add_flag("--augment", ta.augment, "brightness and sub-pixel shift jitter");
  trn->add_flag("--no-dropout", ta.no_dropout, "disable fc1 dropout");
  trn->add_option("--eval-every", ta.eval_every, "validation interval (0 = end only)");
  trn->add_option("--out", ta.out, "checkpoint path");
  trn->add_option("--metrics", ta.metrics, "metrics log path (default <out>.metrics.jsonl)");
  trn->add_option("--resume", ta.resume, "continue from a checkpoint");

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "accuracy and confusion matrix on a manifest");
  evl->add_option("--model", ea.model, "checkpoint");
  evl->add_option("--manifest", ea.manifest, "manifest to evaluate");
  evl->add_option("--max-patches", ea.max_patches);

  PredictArgs pa;
  auto* prd = app.add_subcommand("predict", "classify images");
  prd->add_option("--model", pa.model, "checkpoint");
  prd->add_option("--image", pa.images, "image path (repeatable)");
  prd->add_option("--max-patches", pa.max_patches);
  prd->add_flag("--per-patch", pa.per_patch, "include per-patch distributions");

  AttnArgs aa;
  auto* atn = app.add_subcommand("attn-map", "render the attention map of one image");
  atn->add_option("--model", aa.model, "checkpoint");
  atn->add_option("--image", aa.image, "input image");
  atn->add_option("--out", aa.out, "output .pgm or .png");
  atn->add_option("--max-patches", aa.max_patches);

  GradArgs ga;
  auto* grd = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
  grd->add_option("--variant", ga.variant, "full | variant1 | variant2");
  grd->add_option("--arch", ga.arch, "width preset");
  grd->add_option("--samples", ga.samples, "parameters to probe");
  grd->add_option("--tolerance", ga.tolerance, "max relative error");
  grd->add_flag("--modules", ga.modules, "also check each module in isolation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!g.config.empty()) apply_config(app, sub, load_config_file(g.config));
    if (g.threads < 1) throw UsageError("--threads must be positive");
    if (sub == synth) return run_synth(g, sa);
    if (sub == trn) return run_train(g, ta);
    if (sub == evl) return run_eval(g, ea);
    if (sub == prd) return run_predict(g, pa);
    if (sub == atn) return run_attn_map(g, aa);
    if (sub == grd) return run_gradcheck(g, ga);
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << std::endl;
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitData;
  }
}
