#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>

#include "sgumlp/cli.hpp"

namespace {

using namespace sgumlp::cli;

std::string trim(const std::string& s) {
  const std::size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  return s.substr(begin, s.find_last_not_of(" \t\r") - begin + 1);
}

// Flat key=value file, '#' comments. Entries fill in options the command line
// left at their defaults, so flags always win.
int apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config file: " << path << "\n";
    return kExitUsage;
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: " << path << ":" << lineno << ": expected key=value\n";
      return kExitUsage;
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    CLI::Option* op = cmd->get_option_no_throw("--" + key);
    if (op == nullptr) {
      std::cerr << "error: " << path << ":" << lineno << ": unknown key '" << key
                << "'\n";
      return kExitUsage;
    }
    if (op->count() > 0) continue;
    try {
      op->add_result(value);
      op->run_callback();
    } catch (const CLI::Error& e) {
      std::cerr << "error: " << path << ":" << lineno << ": " << key << ": " << e.what()
                << "\n";
      return kExitUsage;
    }
  }
  return kExitOk;
}

void add_model_options(CLI::App* cmd, ModelFlags& m, bool with_variant) {
  if (with_variant) {
    cmd->add_option("--variant", m.variant, "mlp | sgu-mlp-nodwc | dwc-mlp | sgu-mlp")
        ->capture_default_str();
  }
  cmd->add_option("--window", m.window, "patch window, odd")->capture_default_str();
  cmd->add_option("--token-segment", m.token_segment, "flat values per token")
      ->capture_default_str();
  cmd->add_option("--hidden-dim", m.hidden_dim, "embedding channels")
      ->capture_default_str();
  cmd->add_option("--ffn-dim", m.ffn_dim, "mixer expansion width")->capture_default_str();
  cmd->add_option("--blocks", m.num_blocks, "mixer block count")->capture_default_str();
  cmd->add_option("--dwc-kernels", m.dwc_kernels, "comma list of odd kernel sizes")
      ->capture_default_str();
  cmd->add_flag("--no-token-sgu", m.no_token_sgu, "gate only the channel MLP");
  cmd->add_option("--ln-eps", m.ln_eps, "layer norm epsilon")->capture_default_str();
}

void add_hyper_options(CLI::App* cmd, HyperFlags& h) {
  cmd->add_option("--optimizer", h.optimizer, "adam | sgd-momentum")
      ->capture_default_str();
  cmd->add_option("--lr", h.lr, "learning rate")->capture_default_str();
  cmd->add_option("--beta1", h.beta1, "adam first-moment decay")->capture_default_str();
  cmd->add_option("--beta2", h.beta2, "adam second-moment decay")->capture_default_str();
  cmd->add_option("--adam-eps", h.adam_eps, "adam denominator floor")
      ->capture_default_str();
  cmd->add_option("--momentum", h.momentum, "sgd momentum")->capture_default_str();
  cmd->add_option("--batch", h.batch, "mini-batch size")->capture_default_str();
  cmd->add_option("--epochs", h.epochs, "training epochs")->capture_default_str();
}

void add_split_options(CLI::App* cmd, SplitFlags& s) {
  cmd->add_option("--train-fraction", s.train_fraction,
                  "per-class fraction for the stratified split")
      ->capture_default_str();
  cmd->add_option("--train-labels", s.train_labels,
                  "label raster header for a fixed train split");
  cmd->add_option("--test-labels", s.test_labels,
                  "label raster header for a fixed test split");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGU-MLP multimodal patch classifier"};
  app.require_subcommand(1);
  // repeated flags follow last-wins so callers can append overrides
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string train_config, eval_config, predict_config, ablate_config, synth_config,
      gradcheck_config_path;

  TrainFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "train one variant on a scene");
  train_cmd->add_option("--data", train_flags.data, "scene directory")->required();
  train_cmd->add_option("--out", train_flags.out, "output directory")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_flags.seed, "master seed")->capture_default_str();
  train_cmd->add_option("--classes", train_flags.classes,
                        "class count (0 = infer from labels)");
  add_model_options(train_cmd, train_flags.model, true);
  add_hyper_options(train_cmd, train_flags.hyper);
  add_split_options(train_cmd, train_flags.split);
  train_cmd->add_option("--config", train_config, "key=value file; flags win over file entries");

  EvalFlags eval_flags;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a split");
  eval_cmd->add_option("--ckpt", eval_flags.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_flags.data,
                       "scene directory (default: from the manifest)");
  eval_cmd->add_option("--split", eval_flags.split, "test | train | all")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_flags.out, "also write the report to this file");
  eval_cmd->add_option("--config", eval_config, "key=value file; flags win over file entries");

  PredictFlags predict_flags;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "classify every pixel into a map");
  predict_cmd->add_option("--ckpt", predict_flags.ckpt, "checkpoint path")->required();
  predict_cmd->add_option("--data", predict_flags.data,
                          "scene directory (default: from the manifest)");
  predict_cmd->add_option("--out", predict_flags.out, "output directory")
      ->capture_default_str();
  predict_cmd->add_option("--config", predict_config, "key=value file; flags win over file entries");

  AblateFlags ablate_flags;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train and compare all four variants");
  ablate_cmd->add_option("--data", ablate_flags.data, "scene directory")->required();
  ablate_cmd->add_option("--out", ablate_flags.out, "output directory")
      ->capture_default_str();
  ablate_cmd->add_option("--seeds", ablate_flags.seeds, "comma list of seeds")
      ->capture_default_str();
  ablate_cmd->add_option("--classes", ablate_flags.classes,
                         "class count (0 = infer from labels)");
  add_model_options(ablate_cmd, ablate_flags.model, false);
  add_hyper_options(ablate_cmd, ablate_flags.hyper);
  add_split_options(ablate_cmd, ablate_flags.split);
  ablate_cmd->add_option("--config", ablate_config, "key=value file; flags win over file entries");

  SynthFlags synth_flags;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic scene");
  synth_cmd->add_option("--out", synth_flags.out, "output directory")
      ->capture_default_str();
  synth_cmd->add_option("--classes", synth_flags.classes, "class count")
      ->capture_default_str();
  synth_cmd->add_option("--height", synth_flags.height, "raster height")
      ->capture_default_str();
  synth_cmd->add_option("--width", synth_flags.width, "raster width")
      ->capture_default_str();
  synth_cmd->add_option("--bands", synth_flags.bands, "comma list of bands per modality")
      ->capture_default_str();
  synth_cmd->add_option("--noise", synth_flags.noise, "additive noise sigma")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth_flags.seed, "scene seed")->capture_default_str();
  synth_cmd->add_option("--sites", synth_flags.sites, "Voronoi sites per class")
      ->capture_default_str();
  synth_cmd->add_option("--config", synth_config, "key=value file; flags win over file entries");

  GradcheckFlags gradcheck_flags;
  gradcheck_flags.model.token_segment = 16;
  gradcheck_flags.model.hidden_dim = 8;
  gradcheck_flags.model.ffn_dim = 8;
  gradcheck_flags.model.num_blocks = 2;
  CLI::App* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "compare analytic gradients with finite differences");
  gradcheck_cmd->add_option("--variant", gradcheck_flags.variant,
                            "restrict to one variant (default: all four)");
  gradcheck_cmd->add_option("--seed", gradcheck_flags.seed, "sample seed")
      ->capture_default_str();
  gradcheck_cmd->add_option("--tolerance", gradcheck_flags.tolerance,
                            "max relative error allowed")
      ->capture_default_str();
  gradcheck_cmd->add_option("--samples", gradcheck_flags.samples, "random samples")
      ->capture_default_str();
  gradcheck_cmd->add_option("--bands", gradcheck_flags.bands, "input bands")
      ->capture_default_str();
  gradcheck_cmd->add_option("--classes", gradcheck_flags.classes, "class count")
      ->capture_default_str();
  add_model_options(gradcheck_cmd, gradcheck_flags.model, false);
  gradcheck_cmd->add_option("--config", gradcheck_config_path,
                            "key=value file; flags win over file entries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto configured = [](CLI::App* cmd, const std::string& path, auto runner) {
    if (!path.empty()) {
      const int rc = apply_config_file(cmd, path);
      if (rc != kExitOk) return rc;
    }
    return runner();
  };

  if (*train_cmd) {
    return configured(train_cmd, train_config,
                      [&] { return run_train(train_flags, std::cout); });
  }
  if (*eval_cmd) {
    return configured(eval_cmd, eval_config,
                      [&] { return run_eval(eval_flags, std::cout); });
  }
  if (*predict_cmd) {
    return configured(predict_cmd, predict_config,
                      [&] { return run_predict(predict_flags, std::cout); });
  }
  if (*ablate_cmd) {
    return configured(ablate_cmd, ablate_config,
                      [&] { return run_ablate(ablate_flags, std::cout); });
  }
  if (*synth_cmd) {
    return configured(synth_cmd, synth_config,
                      [&] { return run_synth(synth_flags, std::cout); });
  }
  if (*gradcheck_cmd) {
    return configured(gradcheck_cmd, gradcheck_config_path,
                      [&] { return run_gradcheck(gradcheck_flags, std::cout); });
  }
  return kExitUsage;
}
