#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hfrl/experiment/config.hpp"
#include "hfrl/experiment/controllers.hpp"
#include "hfrl/fed/federation.hpp"
#include "hfrl/metrics.hpp"
#include "hfrl/rl/checkpoint.hpp"
#include "hfrl/rl/learner.hpp"
#include "hfrl/svg.hpp"
#include "hfrl/traffic/simulation.hpp"

namespace hfrl::experiment {

namespace fs = std::filesystem;

// Stream tags under each run seed.
enum : std::uint64_t {
  kTagInit = 1,
  kTagAgent = 1000,
  kTagTrainDemand = 2000,
  kTagCluster = 3000,
  kTagEvalDemand = 5000,
};

inline std::size_t thread_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HFRL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

// Strided worker threads; every index is written by exactly one worker so
// results do not depend on scheduling.
inline fed::ParallelFor make_parallel_for(std::size_t threads) {
  return [threads](std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t w = std::min(threads, n);
    if (w <= 1) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < w; ++k)
      pool.emplace_back([&, k] {
        try {
          for (std::size_t i = k; i < n; i += w) fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
  };
}

inline traffic::SimState make_episode(const Scenario& sc, std::uint64_t demand_seed, double horizon) {
  auto s = traffic::build_network(sc.network);
  traffic::schedule_demand(s, sc.demand, demand_seed, horizon);
  return s;
}

inline std::vector<std::vector<double>> observe_all(const traffic::SimState& s) {
  std::vector<std::vector<double>> out(s.num_intersections());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = traffic::observe(s, static_cast<int>(i)).to_vector();
  return out;
}

inline std::vector<double> concat(const std::vector<std::vector<double>>& xs) {
  std::vector<double> v;
  for (const auto& x : xs) v.insert(v.end(), x.begin(), x.end());
  return v;
}

using Policy = std::function<std::vector<int>(const traffic::SimState&)>;

struct EpisodeResult {
  metrics::EpisodeMetrics metrics;
  std::uint64_t vehicle_steps = 0;
};

// One full episode on fresh demand under a fixed policy.
inline EpisodeResult run_episode(const Scenario& sc, const Policy& policy, std::size_t steps, std::uint64_t demand_seed) {
  auto s = make_episode(sc, demand_seed, static_cast<double>(steps));
  std::vector<double> rewards;
  rewards.reserve(steps);
  const auto n = s.num_intersections();
  for (std::size_t k = 0; k < steps; ++k) {
    traffic::step(s, policy(s));
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) r += traffic::local_reward(traffic::observe(s, static_cast<int>(i)));
    rewards.push_back(r / static_cast<double>(n));
  }
  return {metrics::episode_metrics(s, std::move(rewards)), s.vehicle_steps};
}

// Greedy per-agent policy, or one joint policy when a single multi-head
// model is given.
inline Policy greedy_policy(const std::vector<rl::ModelParams>& models) {
  return [&models](const traffic::SimState& s) {
    const auto obs = observe_all(s);
    RngStream unused(0);
    if (models.size() == 1 && models[0].arch.heads == obs.size() && obs.size() > 1)
      return rl::sample_action(rl::forward_actor(models[0], concat(obs)), unused, true);
    std::vector<int> a(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
      a[i] = rl::sample_action(rl::forward_actor(models[models.size() == 1 ? 0 : i], obs[i]), unused, true)[0];
    return a;
  };
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

inline std::string comm_method(const std::string& method) {
  return is_learning(method) ? method : "decentralized";
}

struct EvalRow {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::size_t episode = 0;
  EpisodeResult result;
  metrics::CommCost comm;
};

inline std::string metrics_header() {
  return "method,seed,round,episode,travel_time,waiting_time,completed,spawned,mean_reward,"
         "params_up,params_down,actions,observations,vehicle_data,total_bytes\n";
}

inline std::string metrics_row(const std::string& method, const EvalRow& r) {
  const auto& m = r.result.metrics;
  const auto& c = r.comm;
  return method + "," + std::to_string(r.seed) + "," + std::to_string(r.round) + "," + std::to_string(r.episode) + "," +
         fmt(m.mean_travel_time) + "," + fmt(m.mean_waiting_time) + "," + std::to_string(m.completed_count) + "," +
         std::to_string(m.spawned_count) + "," + fmt(m.mean_reward()) + "," + fmt(c.params_up) + "," +
         fmt(c.params_down) + "," + fmt(c.actions) + "," + fmt(c.observations) + "," + fmt(c.vehicle_data) + "," +
         fmt(c.total()) + "\n";
}

inline nlohmann::json comm_json(const metrics::CommCost& c) {
  return {{"params_up", c.params_up},       {"params_down", c.params_down}, {"actions", c.actions},
          {"observations", c.observations}, {"vehicle_data", c.vehicle_data}, {"total", c.total()}};
}

struct EvalPoint {
  std::size_t round = 0;
  double mean_reward = 0.0;
  std::optional<double> travel_time;
  double waiting_time = 0.0;
};

inline EvalPoint summarize(std::size_t round, const std::vector<EvalRow>& rows) {
  EvalPoint p;
  p.round = round;
  double tt = 0.0;
  std::size_t ntt = 0;
  for (const auto& r : rows) {
    const auto& m = r.result.metrics;
    p.mean_reward += m.mean_reward();
    p.waiting_time += m.mean_waiting_time;
    if (m.mean_travel_time) {
      tt += *m.mean_travel_time;
      ++ntt;
    }
  }
  const double n = static_cast<double>(rows.size());
  p.mean_reward /= n;
  p.waiting_time /= n;
  if (ntt > 0) p.travel_time = tt / static_cast<double>(ntt);
  return p;
}

inline nlohmann::json to_json(const EvalPoint& p) {
  nlohmann::json j{{"round", p.round}, {"mean_reward", p.mean_reward}, {"waiting_time", p.waiting_time}};
  j["travel_time"] = p.travel_time ? nlohmann::json(*p.travel_time) : nlohmann::json(nullptr);
  return j;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;              // every evaluation episode
  std::vector<EvalPoint> evals;           // per evaluation point
  std::vector<std::vector<double>> round_rewards;  // per round, per agent mean training reward
  std::vector<nlohmann::json> rounds;     // federation diagnostics
  std::optional<metrics::CommCost> training_comm;
  std::size_t params_per_agent = 0;
  std::vector<double> first_episode_rewards;  // baselines: per-step reward of episode 1
};

inline std::vector<EvalRow> evaluate(const ExperimentConfig& cfg, const Policy& policy, std::uint64_t seed,
                                     std::size_t round, std::size_t params_per_agent) {
  std::vector<EvalRow> rows;
  const bool fed = metrics::is_federated(cfg.method);
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    EvalRow r;
    r.seed = seed;
    r.round = round;
    r.episode = e + 1;
    r.result = run_episode(cfg.scenario, policy, cfg.steps_per_episode, mix_seed(seed, kTagEvalDemand + e));
    metrics::CommLog log;
    log.agents = cfg.agents();
    log.params_per_agent = params_per_agent;
    log.rounds = fed ? cfg.steps_per_episode / cfg.local_steps : 0;
    log.control_steps = cfg.steps_per_episode;
    log.vehicle_steps = r.result.vehicle_steps;
    r.comm = metrics::comm_cost(log, cfg.comm, comm_method(cfg.method));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline SeedOutcome run_baseline_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  const double green = cfg.fixed_green, gap = cfg.actuated_gap;
  Policy p = cfg.method == "fixed" ? Policy([green](const traffic::SimState& s) { return fixed_time_controller(s, green); })
                                   : Policy([gap](const traffic::SimState& s) { return actuated_controller(s, gap); });
  out.rows = evaluate(cfg, p, seed, 0, 0);
  out.evals.push_back(summarize(0, out.rows));
  out.first_episode_rewards = out.rows.front().result.metrics.reward_series;
  return out;
}

struct RunHooks {
  // Called with (seed, round, per-agent uploaded params) at snapshot rounds.
  std::function<void(std::uint64_t, std::size_t, const std::vector<rl::ModelParams>&)> snapshot;
  std::ostream* log = nullptr;
};

// Synchronous training for one seed: T rounds of local A2C on a shared
// simulation, each followed by upload, aggregation and broadcast.
inline SeedOutcome run_learning_seed(const ExperimentConfig& cfg, std::uint64_t seed, const RunHooks& hooks,
                                     std::vector<rl::ModelParams>* final_models = nullptr) {
  SeedOutcome out;
  out.seed = seed;
  const std::size_t N = cfg.agents();
  const bool central = cfg.method == "centralized";
  const std::size_t L = central ? 1 : N;
  auto pfor = make_parallel_for(thread_count());

  rl::ArchSpec arch = cfg.arch;
  arch.obs_dim = traffic::Observation::dim * (central ? N : 1);
  arch.heads = central ? N : 1;
  const auto init = rl::init_params(arch, mix_seed(seed, kTagInit));
  out.params_per_agent = init.size();
  std::vector<rl::Learner> learners;
  for (std::size_t n = 0; n < L; ++n) learners.emplace_back(init, cfg.train, mix_seed(seed, kTagAgent + n));
  std::vector<rl::ModelParams> prev(L, init);

  fed::Method fmethod = fed::Method::none;
  if (cfg.method == "fedavg") fmethod = fed::Method::fedavg;
  else if (cfg.method == "cluster") fmethod = fed::Method::cluster;
  else if (cfg.method == "fomo") fmethod = fed::Method::fomo;

  const auto snaps = cfg.snapshots();
  const double horizon = static_cast<double>(cfg.steps_per_episode);
  std::size_t episode = 0;
  auto sim = make_episode(cfg.scenario, mix_seed(seed, kTagTrainDemand + episode), horizon);
  std::uint64_t vehicle_steps = 0;

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    std::vector<rl::Trajectory> trajs(L);
    std::vector<double> reward_sum(N, 0.0);
    for (std::size_t k = 0; k < cfg.local_steps; ++k) {
      if (sim.clock >= horizon - 1e-9) {
        vehicle_steps += sim.vehicle_steps;
        ++episode;
        sim = make_episode(cfg.scenario, mix_seed(seed, kTagTrainDemand + episode), horizon);
      }
      const auto obs = observe_all(sim);
      std::vector<std::vector<int>> acts(L);
      std::vector<int> joint(N);
      if (central) {
        acts[0] = learners[0].act(concat(obs));
        joint = acts[0];
      } else {
        for (std::size_t n = 0; n < N; ++n) {
          acts[n] = learners[n].act(obs[n]);
          joint[n] = acts[n][0];
        }
      }
      traffic::step(sim, joint);
      std::vector<std::vector<double>> next(N);
      std::vector<double> r(N);
      for (std::size_t n = 0; n < N; ++n) {
        const auto o = traffic::observe(sim, static_cast<int>(n));
        next[n] = o.to_vector();
        r[n] = traffic::local_reward(o);
        reward_sum[n] += r[n];
      }
      if (central) {
        double mean = 0.0;
        for (double x : r) mean += x;
        rl::Transition tr{concat(obs), acts[0], mean / static_cast<double>(N), concat(next)};
        trajs[0].push_back(tr);
        learners[0].push(std::move(tr));
      } else {
        for (std::size_t n = 0; n < N; ++n) {
          rl::Transition tr{obs[n], acts[n], r[n], next[n]};
          trajs[n].push_back(tr);
          learners[n].push(std::move(tr));
        }
      }
      if (learners[0].full()) pfor(L, [&](std::size_t n) { learners[n].flush(); });
    }
    pfor(L, [&](std::size_t n) { learners[n].flush(); });

    std::vector<double> round_means(N);
    for (std::size_t n = 0; n < N; ++n) round_means[n] = reward_sum[n] / static_cast<double>(cfg.local_steps);
    out.round_rewards.push_back(round_means);

    std::vector<rl::ModelParams> uploads(L);
    for (std::size_t n = 0; n < L; ++n) uploads[n] = learners[n].params();
    if (hooks.snapshot && std::find(snaps.begin(), snaps.end(), t) != snaps.end()) hooks.snapshot(seed, t, uploads);

    if (!central) {
      fed::FederationRound fr;
      fr.round = t;
      fr.method = fmethod;
      fr.previous = prev;
      fr.clusters = cfg.clusters;
      fr.alpha = cfg.alpha;
      fr.seed = mix_seed(seed, kTagCluster + t);
      fr.oracle = {cfg.train.gamma, cfg.train.horizon, cfg.train.loss};
      fr.standardize_features = cfg.standardize_features;
      fr.uploads.resize(N);
      pfor(N, [&](std::size_t n) {
        fr.uploads[n].params = uploads[n];
        fr.uploads[n].trajectory = &trajs[n];
        fr.uploads[n].loss = rl::scalar_loss(uploads[n], trajs[n], cfg.train.gamma, cfg.train.horizon, cfg.train.loss);
      });
      auto res = fed::run_round(fr, pfor);
      auto j = res.diagnostics.to_json();
      j["seed"] = seed;
      j["episode"] = episode;
      j["epoch"] = t;
      out.rounds.push_back(std::move(j));
      for (std::size_t n = 0; n < N; ++n) {
        learners[n].set_params(res.params[n]);
        prev[n] = std::move(res.params[n]);
      }
    }

    if (t == 1 || t % cfg.eval_every == 0 || t == cfg.rounds) {
      std::vector<rl::ModelParams> models;
      for (const auto& l : learners) models.push_back(l.params());
      auto rows = evaluate(cfg, greedy_policy(models), seed, t, out.params_per_agent);
      out.evals.push_back(summarize(t, rows));
      if (hooks.log) {
        const auto& e = out.evals.back();
        *hooks.log << "  seed " << seed << " round " << t << ": eval reward " << fmt(e.mean_reward) << ", travel time "
                   << (e.travel_time ? fmt(*e.travel_time) : std::string("n/a")) << " s\n";
      }
      out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    }
  }
  vehicle_steps += sim.vehicle_steps;

  metrics::CommLog log;
  log.agents = N;
  log.params_per_agent = out.params_per_agent;
  log.rounds = cfg.rounds;
  log.control_steps = cfg.rounds * cfg.local_steps;
  log.vehicle_steps = vehicle_steps;
  out.training_comm = metrics::comm_cost(log, cfg.comm, cfg.method);
  if (final_models) {
    final_models->clear();
    for (const auto& l : learners) final_models->push_back(l.params());
  }
  return out;
}

inline void write_file(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << content;
}

inline std::string agent_name(std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "agent_%02zu", n);
  return buf;
}

// Runs every seed of the configuration and writes the artifact directory.
inline fs::path run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  log << "run: method=" << cfg.method << " scenario=" << cfg.scenario.name << " seeds=" << cfg.seeds.size()
      << " out=" << dir.string() << "\n";
  if (is_learning(cfg.method))
    log << "hyperparameters: preset=" << cfg.preset << " lr=" << cfg.train.lr << " gamma=" << cfg.train.gamma
        << " rollout=" << cfg.train.rollout_length << " optimizer=" << rl::to_string(cfg.train.optimizer)
        << " hidden=" << cfg.arch.hidden.size() << "x" << (cfg.arch.hidden.empty() ? 0 : cfg.arch.hidden[0]) << " "
        << nn::to_string(cfg.arch.activation) << " (presets table/prose disagree; see README)\n";

  std::string metrics_csv = metrics_header();
  std::string rewards_csv;
  std::string rounds_jsonl;
  nlohmann::json summary;
  summary["config"] = to_json(cfg);
  summary["scenario"] = cfg.scenario.name;
  summary["method"] = cfg.method;
  summary["seeds"] = nlohmann::json::array();
  std::vector<svg::Series> train_curves, eval_curves;

  RunHooks hooks;
  hooks.log = &log;
  hooks.snapshot = [&](std::uint64_t seed, std::size_t round, const std::vector<rl::ModelParams>& ps) {
    const auto d = dir / "params" / ("seed_" + std::to_string(seed)) / ("round_" + std::to_string(round));
    fs::create_directories(d);
    for (std::size_t n = 0; n < ps.size(); ++n) rl::save_checkpoint((d / (agent_name(n) + ".ckpt")).string(), {ps[n], seed, round});
  };

  for (auto seed : cfg.seeds) {
    SeedOutcome o;
    if (is_learning(cfg.method)) {
      std::vector<rl::ModelParams> finals;
      o = run_learning_seed(cfg, seed, hooks, &finals);
      const auto d = dir / "params" / ("seed_" + std::to_string(seed)) / "final";
      fs::create_directories(d);
      for (std::size_t n = 0; n < finals.size(); ++n)
        rl::save_checkpoint((d / (agent_name(n) + ".ckpt")).string(), {finals[n], seed, cfg.rounds});
    } else {
      o = run_baseline_seed(cfg, seed);
    }
    for (const auto& r : o.rows) metrics_csv += metrics_row(cfg.method, r);
    if (rewards_csv.empty() && !o.round_rewards.empty()) {
      rewards_csv = "seed,round";
      for (std::size_t n = 0; n < o.round_rewards[0].size(); ++n) rewards_csv += "," + agent_name(n);
      rewards_csv += ",mean\n";
    }
    svg::Series tc{"seed " + std::to_string(seed), {}}, ec{"seed " + std::to_string(seed), {}};
    for (std::size_t t = 0; t < o.round_rewards.size(); ++t) {
      rewards_csv += std::to_string(seed) + "," + std::to_string(t + 1);
      double mean = 0.0;
      for (double x : o.round_rewards[t]) {
        rewards_csv += "," + fmt(x);
        mean += x;
      }
      mean /= static_cast<double>(o.round_rewards[t].size());
      rewards_csv += "," + fmt(mean) + "\n";
      tc.points.emplace_back(static_cast<double>(t + 1), mean);
    }
    for (auto& j : o.rounds) rounds_jsonl += j.dump() + "\n";
    for (const auto& e : o.evals) ec.points.emplace_back(static_cast<double>(e.round), e.mean_reward);
    if (o.round_rewards.empty())
      for (std::size_t k = 0; k < o.first_episode_rewards.size(); ++k)
        tc.points.emplace_back(static_cast<double>(k + 1), o.first_episode_rewards[k]);
    train_curves.push_back(std::move(tc));
    eval_curves.push_back(std::move(ec));

    nlohmann::json js;
    js["seed"] = seed;
    js["evaluations"] = nlohmann::json::array();
    for (const auto& e : o.evals) js["evaluations"].push_back(to_json(e));
    js["final"] = to_json(o.evals.back());
    js["first"] = to_json(o.evals.front());
    std::vector<double> per_episode_total;
    metrics::CommCost mean_comm;
    std::size_t final_rows = 0;
    for (const auto& r : o.rows)
      if (r.round == o.evals.back().round) {
        mean_comm += r.comm;
        per_episode_total.push_back(r.comm.total());
        ++final_rows;
      }
    const double k = static_cast<double>(final_rows);
    mean_comm.params_up /= k;
    mean_comm.params_down /= k;
    mean_comm.actions /= k;
    mean_comm.observations /= k;
    mean_comm.vehicle_data /= k;
    js["comm_per_episode"] = comm_json(mean_comm);
    const auto ms = metrics::mean_std(per_episode_total);
    js["comm_per_episode"]["total_std"] = ms.std;
    if (o.training_comm) js["training_comm"] = comm_json(*o.training_comm);
    js["params_per_agent"] = o.params_per_agent;
    summary["seeds"].push_back(std::move(js));
  }

  write_file(dir / "metrics.csv", metrics_csv);
  if (is_learning(cfg.method)) write_file(dir / "rewards.csv", rewards_csv);
  if (!rounds_jsonl.empty()) write_file(dir / "rounds.jsonl", rounds_jsonl);
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  if (is_learning(cfg.method)) {
    write_file(dir / "reward_curve.svg",
               svg::line_chart(train_curves, cfg.method + " training reward (" + cfg.scenario.name + ")", "round",
                               "mean reward per step"));
    write_file(dir / "eval_curve.svg", svg::line_chart(eval_curves, cfg.method + " greedy evaluation reward", "round",
                                                       "mean reward per step"));
  } else {
    write_file(dir / "reward_curve.svg", svg::line_chart(train_curves, cfg.method + " reward, first episode", "step",
                                                         "mean reward"));
  }
  log << "wrote " << dir.string() << "\n";
  return dir;
}

}  // namespace hfrl::experiment
