// Command-line front end. Reports go to stdout as JSON. Exit status: 0 when
// every check of the invoked command passes, 1 when a check fails, 2 on
// invalid input or a numerical failure.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "bisimlab/certify.hpp"
#include "bisimlab/erank.hpp"
#include "bisimlab/eval.hpp"

using namespace bisimlab;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw InvalidInput("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

void emit(const nlohmann::json& doc, const std::string& out) {
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw InvalidInput("cannot write " + out);
  f << doc.dump(2) << '\n';
}

int cmd_train(const std::string& config, const std::string& out) {
  const auto cfg = load_run_config(config);
  const auto result = train::train(cfg, out);
  nlohmann::json doc{{"out", out}, {"steps", result.metrics.size()}, {"checkpoint", result.final_checkpoint.string()}};
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    doc["final"] = {{"l_behavior", last.l_behavior},
                    {"l_reconstruction", last.l_reconstruction},
                    {"l_total", last.l_total},
                    {"latent_erank", last.latent_erank}};
  }
  emit(doc, "");
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string env;
  std::string clean_env;
  Index pairs = 500;
  Index states = 200;
  long permutations = 2000;
  std::uint64_t seed = 0;
  double tol = 1e-6;
  std::string out;
};

int cmd_align(const EvalArgs& a) {
  const auto cfg = eval::find_run_config(a.checkpoint);
  const auto spec = a.env.empty() ? cfg.env : envs::env_spec_from_json(read_json(a.env));
  envs::PixelGridEnv env(spec);
  const auto exact = eval::exact_metric(env, a.tol);
  const auto pairs = eval::sample_state_pairs(env.mdp().n_states(), a.pairs, a.seed);
  const auto trained =
      eval::evaluate_metric_alignment(eval::load_encoder(a.checkpoint), env, exact.metric, pairs, a.permutations, a.seed);
  const auto baseline =
      eval::evaluate_metric_alignment(eval::initial_encoder(cfg), env, exact.metric, pairs, a.permutations, a.seed);
  const auto paired =
      eval::paired_spearman_test(trained.exact, trained.learned, baseline.learned, a.permutations, a.seed + 1);
  const bool ok = paired.p_value < 0.05;
  emit({{"trained", to_json(trained)},
        {"baseline", to_json(baseline)},
        {"paired", {{"statistic", paired.statistic}, {"p_value", paired.p_value}, {"permutations", paired.permutations}}},
        {"exact_metric", {{"iterations", exact.iterations}, {"residual", exact.residual}, {"diameter", exact.diameter}}},
        {"trained_beats_baseline", ok}},
       a.out);
  return ok ? 0 : 1;
}

int cmd_invariance(const EvalArgs& a) {
  require(!a.env.empty(), "eval invariance: --env (the distracted environment) is required");
  const auto cfg = eval::find_run_config(a.checkpoint);
  const auto distracted_spec = envs::env_spec_from_json(read_json(a.env));
  auto clean_spec = distracted_spec;
  clean_spec.distractor = envs::Distractor::None;
  if (!a.clean_env.empty()) clean_spec = envs::env_spec_from_json(read_json(a.clean_env));
  envs::PixelGridEnv clean(clean_spec), distracted(distracted_spec);
  const auto rep = eval::evaluate_distractor_invariance(eval::load_encoder(a.checkpoint), eval::initial_encoder(cfg),
                                                        clean, distracted, a.states, a.seed);
  const bool ok = rep.mean_distance <= rep.baseline_mean_distance;
  auto doc = to_json(rep);
  doc["trained_not_worse"] = ok;
  emit(doc, a.out);
  return ok ? 0 : 1;
}

struct MetricArgs {
  std::string mdp;
  std::string policy;
  Index width = 5;
  Index height = 5;
  std::string reward = "dense-distance";
  double slip = 0.0;
  double gamma = 0.99;
  double tol = 1e-6;
  long max_iter = 100000;
  std::string out;
};

int cmd_metric_solve(const MetricArgs& a) {
  mdp::TabularMDP m = [&] {
    if (!a.mdp.empty()) return mdp::mdp_from_json(read_json(a.mdp));
    mdp::GridSpec g;
    g.width = a.width;
    g.height = a.height;
    g.reward = mdp::parse_reward_spec(a.reward);
    g.slip_prob = a.slip;
    g.gamma = a.gamma;
    return mdp::make_gridworld(g);
  }();
  const auto policy =
      a.policy.empty() ? mdp::Policy::uniform(m.n_states(), m.n_actions()) : mdp::policy_from_json(read_json(a.policy));
  const auto rep = metric::solve_fixed_point(m, policy, a.tol, a.max_iter);
  emit(metric::to_json(rep), a.out);
  return 0;
}

struct ErankArgs {
  Index n = 8;
  Index k = 4;
  double sigma2 = 1.0;
  long steps = 100;
  double lr = 0.002;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_erank_run(const ErankArgs& a) {
  auto setting = erank_lab::linear_setting(a.n, a.k, a.sigma2, a.seed);
  setting.lr = a.lr;
  const auto series = erank_lab::run_linear_experiment(setting, a.steps);
  if (!a.out.empty()) erank_lab::write_erank_csv(a.out, series);
  emit({{"initial_erank", series.front().erank},
        {"final_erank", series.back().erank},
        {"increasing_prefix", erank_lab::increasing_prefix(series)},
        {"steps", a.steps},
        {"csv", a.out}},
       "");
  return 0;
}

int cmd_certify_all(std::uint64_t seed) {
  nlohmann::json doc = nlohmann::json::array();
  bool ok = true;
  for (const auto& c : certify::all(seed)) {
    doc.push_back(to_json(c));
    ok = ok && c.passed();
  }
  emit(doc, "");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bisimulation metric laboratory"};
  app.require_subcommand(1);
  int status = 0;

  std::string config, train_out = "bisimlab_run";
  auto* train = app.add_subcommand("train", "train an encoder and transformer on a pixel gridworld");
  train->add_option("--config", config, "run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "output directory");
  train->callback([&] { status = cmd_train(config, train_out); });

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("eval", "evaluate a checkpoint");
  evaluate->require_subcommand(1);
  auto* align = evaluate->add_subcommand("align", "rank correlation with the exact metric, against the untrained encoder");
  auto* inv = evaluate->add_subcommand("invariance", "latent distance between clean and distracted renders");
  for (auto* sub : {align, inv}) {
    sub->add_option("--checkpoint", ev.checkpoint, "checkpoint with config.json beside it")->required();
    sub->add_option("--env", ev.env, "environment spec JSON");
    sub->add_option("--seed", ev.seed, "sampling seed");
    sub->add_option("--out", ev.out, "write the report here instead of stdout");
  }
  align->add_option("--pairs", ev.pairs, "number of state pairs");
  align->add_option("--permutations", ev.permutations, "permutations per test");
  align->add_option("--tol", ev.tol, "fixed-point tolerance");
  inv->add_option("--clean-env", ev.clean_env, "clean environment spec JSON (default: --env without distractor)");
  inv->add_option("--states", ev.states, "number of sampled states");
  align->callback([&] { status = cmd_align(ev); });
  inv->callback([&] { status = cmd_invariance(ev); });

  MetricArgs ma;
  auto* metric_cmd = app.add_subcommand("metric", "exact on-policy bisimulation metric");
  metric_cmd->require_subcommand(1);
  auto* solve = metric_cmd->add_subcommand("solve", "fixed point of an MDP JSON or a gridworld");
  solve->add_option("--mdp", ma.mdp, "MDP JSON (otherwise a gridworld is built)");
  solve->add_option("--policy", ma.policy, "policy JSON (default uniform)");
  solve->add_option("--width", ma.width, "gridworld width");
  solve->add_option("--height", ma.height, "gridworld height");
  solve->add_option("--reward", ma.reward, "dense-distance, sparse-goal or zero");
  solve->add_option("--slip", ma.slip, "slip probability");
  solve->add_option("--gamma", ma.gamma, "discount");
  solve->add_option("--tol", ma.tol, "sup-norm tolerance");
  solve->add_option("--max-iter", ma.max_iter, "iteration cap");
  solve->add_option("--out", ma.out, "write the report here instead of stdout");
  solve->callback([&] { status = cmd_metric_solve(ma); });

  ErankArgs ea;
  auto* erank_cmd = app.add_subcommand("erank", "effective rank in the linear reconstruction setting");
  erank_cmd->require_subcommand(1);
  auto* run = erank_cmd->add_subcommand("run", "train the linear setting and record erank per step");
  run->add_option("--n", ea.n, "input dimension");
  run->add_option("--k", ea.k, "feature dimension");
  run->add_option("--sigma2", ea.sigma2, "view noise variance");
  run->add_option("--steps", ea.steps, "SGD steps");
  run->add_option("--lr", ea.lr, "learning rate");
  run->add_option("--seed", ea.seed, "seed");
  run->add_option("--out", ea.out, "CSV path");
  run->callback([&] { status = cmd_erank_run(ea); });

  std::uint64_t certify_seed = 0;
  auto* cert = app.add_subcommand("certify", "empirical certificates");
  cert->require_subcommand(1);
  auto* all = cert->add_subcommand("all", "run every certifier");
  all->add_option("--seed", certify_seed, "seed");
  all->callback([&] { status = cmd_certify_all(certify_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return status;
}
