#include "mdfl/marl.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mdfl/error.hpp"

namespace mdfl::marl {

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError(fmt::format("gamma must be in (0, 1], got {}", gamma));
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw ConfigError(fmt::format("gae_lambda must be in [0, 1], got {}", gae_lambda));
  if (!(clip > 0.0)) throw ConfigError(fmt::format("clip must be positive, got {}", clip));
  if (!(entropy_coef >= 0.0)) throw ConfigError("entropy_coef must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (steps_per_trajectory < 1) throw ConfigError("steps_per_trajectory must be >= 1");
  if (batch_trajectories < 1) throw ConfigError("batch_trajectories must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("hidden layer sizes must be positive");
}

namespace {

void check_lengths(std::size_t rewards, std::size_t values, std::size_t dones) {
  if (rewards != values || rewards != dones)
    throw PreconditionError(
        fmt::format("sequence lengths differ: rewards {}, values {}, dones {}", rewards, values, dones));
}

}  // namespace

std::vector<double> td_errors(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                              double gamma, std::span<const std::uint8_t> dones) {
  check_lengths(rewards.size(), values.size(), dones.size());
  const std::size_t n = rewards.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = t + 1 < n ? values[t + 1] : bootstrap;
    delta[t] = rewards[t] + gamma * next * (dones[t] ? 0.0 : 1.0) - values[t];
  }
  return delta;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                        double gamma, double lambda, std::span<const std::uint8_t> dones) {
  auto adv = td_errors(rewards, values, bootstrap, gamma, dones);
  double acc = 0.0;
  for (std::size_t i = adv.size(); i-- > 0;) {
    acc = adv[i] + (dones[i] ? 0.0 : gamma * lambda * acc);
    adv[i] = acc;
  }
  return adv;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma,
                                       std::span<const std::uint8_t> dones) {
  if (rewards.size() != dones.size()) throw PreconditionError("rewards and dones differ in length");
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + (dones[i] ? 0.0 : gamma * acc);
    out[i] = acc;
  }
  return out;
}

GroupNets make_group_nets(const AgentGroupSpec& spec, const PpoConfig& config, nn::Rng& rng) {
  GroupNets g;
  g.policy_spec.layer_sizes.push_back(spec.obs_dim);
  g.value_spec.layer_sizes.push_back(spec.value_dim);
  for (auto h : config.hidden) {
    g.policy_spec.layer_sizes.push_back(h);
    g.value_spec.layer_sizes.push_back(h);
  }
  g.policy_spec.layer_sizes.push_back(spec.num_actions);
  g.value_spec.layer_sizes.push_back(1);
  g.policy_spec.hidden = g.value_spec.hidden = nn::Activation::kTanh;
  g.policy_spec.head = g.value_spec.head = nn::Head::kLinear;
  g.policy_spec.validate();
  g.value_spec.validate();
  g.policy = nn::init_params(g.policy_spec, rng);
  g.value = nn::init_params(g.value_spec, rng);
  g.policy_opt = nn::AdamState(g.policy.size(), config.learning_rate);
  g.value_opt = nn::AdamState(g.value.size(), config.learning_rate);
  return g;
}

ClipTerm clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  const double a = ratio * advantage;
  const double b = clipped * advantage;
  if (b < a) return {b, clipped, true};
  return {a, ratio, false};
}

double clipped_value_loss(double value, double value_old, double target, double clip) {
  const double vc = value_old + std::clamp(value - value_old, -clip, clip);
  return std::max((value - target) * (value - target), (vc - target) * (vc - target));
}

LossStats ppo_gradients(const GroupNets& nets, std::span<const Sample> samples, double clip, double entropy_coef,
                        Gradients& grads) {
  grads.policy.assign(nets.policy.size(), 0.0);
  grads.value.assign(nets.value.size(), 0.0);
  LossStats stats;
  for (const auto& s : samples)
    if (s.active) ++stats.samples;
  if (stats.samples == 0) return stats;
  const double inv = 1.0 / static_cast<double>(stats.samples);

  std::vector<double> g_logits;
  for (const auto& s : samples) {
    if (!s.active) continue;
    const auto pc = nn::forward(nets.policy_spec, nets.policy, s.obs);
    const auto p = nn::masked_softmax(pc.logits(), s.action_mask);
    const double logp = std::log(p[static_cast<std::size_t>(s.action)]);
    const double ratio = std::exp(logp - s.log_prob);
    const auto term = clipped_surrogate(ratio, s.advantage, clip);
    if (term.clipped_branch) ++stats.clipped;
    const double h = nn::entropy(p);

    // d(-obj)/dlogp is -ratio*A on the unclipped branch, 0 on the clipped one.
    const double g_logp = term.clipped_branch ? 0.0 : -ratio * s.advantage;
    g_logits.assign(p.size(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (p[j] <= 0.0) continue;
      const double onehot = static_cast<int>(j) == s.action ? 1.0 : 0.0;
      g_logits[j] = inv * (g_logp * (onehot - p[j]) + entropy_coef * p[j] * (std::log(p[j]) + h));
    }
    nn::backward_logits(nets.policy_spec, nets.policy, pc, g_logits, grads.policy);
    stats.policy_loss += inv * (-term.objective - entropy_coef * h);
    stats.entropy += inv * h;

    const auto vc = nn::forward(nets.value_spec, nets.value, s.value_input);
    const double v = vc.output[0];
    const double l1 = (v - s.ret) * (v - s.ret);
    const double diff = v - s.value;
    const double vclip = s.value + std::clamp(diff, -clip, clip);
    const double l2 = (vclip - s.ret) * (vclip - s.ret);
    double gv = 0.0;
    if (l1 >= l2) {
      gv = 2.0 * (v - s.ret);
    } else if (diff > -clip && diff < clip) {
      gv = 2.0 * (vclip - s.ret);
    }
    const double g_out = inv * gv;
    nn::backward(nets.value_spec, nets.value, vc, std::span<const double>(&g_out, 1), grads.value);
    stats.value_loss += inv * std::max(l1, l2);
  }
  if (!std::isfinite(stats.policy_loss) || !std::isfinite(stats.value_loss))
    throw InvariantError(fmt::format("non-finite PPO loss: policy {} value {} over {} samples", stats.policy_loss,
                                     stats.value_loss, stats.samples));
  return stats;
}

MappoTrainer::MappoTrainer(std::vector<AgentGroupSpec> groups, PpoConfig config, std::uint64_t seed)
    : groups_(std::move(groups)), config_(std::move(config)), rng_(seed) {
  config_.validate();
  if (groups_.empty()) throw ConfigError("at least one agent group is required");
  for (const auto& g : groups_) {
    if (g.num_agents == 0 || g.obs_dim == 0 || g.value_dim == 0 || g.num_actions == 0)
      throw ConfigError(fmt::format("agent group '{}' has a zero dimension", g.name));
    nets_.push_back(make_group_nets(g, config_, rng_));
  }
}

std::vector<double> MappoTrainer::action_probs(std::size_t group, const AgentView& view) const {
  const auto& n = nets_.at(group);
  const auto cache = nn::forward(n.policy_spec, n.policy, view.obs);
  return nn::masked_softmax(cache.logits(), view.action_mask);
}

int MappoTrainer::greedy_action(std::size_t group, const AgentView& view) const {
  return nn::argmax(action_probs(group, view));
}

double MappoTrainer::value(std::size_t group, std::span<const double> value_input) const {
  const auto& n = nets_.at(group);
  return nn::forward(n.value_spec, n.value, value_input).output[0];
}

namespace {

void check_observation(const std::vector<AgentGroupSpec>& groups, const Observation& obs) {
  if (obs.views.size() != groups.size())
    throw InvariantError(fmt::format("environment returned {} groups, expected {}", obs.views.size(), groups.size()));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (obs.views[g].size() != groups[g].num_agents)
      throw InvariantError(fmt::format("group '{}' has {} views, expected {}", groups[g].name, obs.views[g].size(),
                                       groups[g].num_agents));
    for (const auto& v : obs.views[g]) {
      if (v.obs.size() != groups[g].obs_dim || v.value_input.size() != groups[g].value_dim ||
          v.action_mask.size() != groups[g].num_actions)
        throw InvariantError(fmt::format("group '{}' view has the wrong shape", groups[g].name));
    }
  }
}

}  // namespace

MappoTrainer::Batch MappoTrainer::collect(MultiAgentEnv& env) {
  const std::size_t steps = static_cast<std::size_t>(config_.steps_per_trajectory);
  Batch batch;
  batch.samples.resize(groups_.size());

  for (int z = 0; z < config_.batch_trajectories; ++z) {
    // traj[g][a][t]
    std::vector<std::vector<std::vector<Sample>>> traj(groups_.size());
    std::vector<std::vector<std::vector<double>>> rewards(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      traj[g].resize(groups_[g].num_agents);
      rewards[g].resize(groups_[g].num_agents);
    }
    std::vector<std::uint8_t> dones;

    for (std::size_t t = 0; t < steps; ++t) {
      if (!have_obs_) {
        obs_ = env.reset();
        check_observation(groups_, obs_);
        have_obs_ = true;
      }
      std::vector<std::vector<int>> actions(groups_.size());
      for (std::size_t g = 0; g < groups_.size(); ++g) {
        actions[g].assign(groups_[g].num_agents, 0);
        for (std::size_t a = 0; a < groups_[g].num_agents; ++a) {
          const auto& view = obs_.views[g][a];
          Sample s;
          s.obs = view.obs;
          s.value_input = view.value_input;
          s.action_mask = view.action_mask;
          s.active = view.active;
          s.value = value(g, view.value_input);
          if (view.active) {
            const auto probs = action_probs(g, view);
            const auto draw = nn::sample_categorical(probs, view.action_mask, rng_);
            s.action = draw.action;
            s.log_prob = std::log(probs[static_cast<std::size_t>(draw.action)]);
          }
          actions[g][a] = s.action;
          traj[g][a].push_back(std::move(s));
        }
      }
      auto result = env.step(actions);
      for (std::size_t g = 0; g < groups_.size(); ++g)
        for (std::size_t a = 0; a < groups_[g].num_agents; ++a) {
          const double r = traj[g][a].back().active ? result.rewards.at(g).at(a) : 0.0;
          rewards[g][a].push_back(r);
          batch.accumulated_reward += r;
        }
      dones.push_back(result.done ? 1 : 0);
      if (result.done) {
        have_obs_ = false;
      } else {
        obs_ = std::move(result.next);
        check_observation(groups_, obs_);
      }
    }

    for (std::size_t g = 0; g < groups_.size(); ++g) {
      for (std::size_t a = 0; a < groups_[g].num_agents; ++a) {
        auto& seq = traj[g][a];
        std::vector<double> values(steps);
        for (std::size_t t = 0; t < steps; ++t) values[t] = seq[t].value;
        const double bootstrap = have_obs_ ? value(g, obs_.views[g][a].value_input) : 0.0;
        const auto adv = gae(rewards[g][a], values, bootstrap, config_.gamma, config_.gae_lambda, dones);
        const auto ret = discounted_returns(rewards[g][a], config_.gamma, dones);
        for (std::size_t t = 0; t < steps; ++t) {
          seq[t].advantage = adv[t];
          seq[t].ret = ret[t];
          batch.samples[g].push_back(std::move(seq[t]));
        }
      }
    }
  }
  batch.accumulated_reward /= static_cast<double>(config_.batch_trajectories);
  return batch;
}

LossStats MappoTrainer::update(Batch& batch) {
  if (config_.normalize_advantages) {
    for (auto& group : batch.samples) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (const auto& s : group)
        if (s.active) {
          sum += s.advantage;
          ++n;
        }
      if (n == 0) continue;
      const double mean = sum / static_cast<double>(n);
      for (const auto& s : group)
        if (s.active) sq += (s.advantage - mean) * (s.advantage - mean);
      const double sd = std::sqrt(sq / static_cast<double>(n));
      for (auto& s : group)
        if (s.active) s.advantage = (s.advantage - mean) / (sd + 1e-8);
    }
  }

  LossStats total;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    LossStats epoch_stats;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      Gradients grads;
      const auto stats = ppo_gradients(nets_[g], batch.samples[g], config_.clip, config_.entropy_coef, grads);
      if (stats.samples == 0) continue;
      nn::adam_step(nets_[g].policy_opt, nets_[g].policy, grads.policy);
      nn::adam_step(nets_[g].value_opt, nets_[g].value, grads.value);
      const double w = static_cast<double>(stats.samples);
      epoch_stats.policy_loss += w * stats.policy_loss;
      epoch_stats.value_loss += w * stats.value_loss;
      epoch_stats.entropy += w * stats.entropy;
      epoch_stats.samples += stats.samples;
      epoch_stats.clipped += stats.clipped;
    }
    if (epoch_stats.samples > 0) {
      const double n = static_cast<double>(epoch_stats.samples);
      epoch_stats.policy_loss /= n;
      epoch_stats.value_loss /= n;
      epoch_stats.entropy /= n;
    }
    total = epoch_stats;  // diagnostics of the last epoch
  }
  return total;
}

EpisodeStats MappoTrainer::train_episode(MultiAgentEnv& env) {
  auto batch = collect(env);
  const auto loss = update(batch);
  EpisodeStats s;
  s.episode = ++episode_;
  s.accumulated_reward = batch.accumulated_reward;
  s.policy_loss = loss.policy_loss;
  s.value_loss = loss.value_loss;
  s.entropy = loss.entropy;
  return s;
}

std::vector<EpisodeStats> MappoTrainer::train(MultiAgentEnv& env, int episodes,
                                              const std::function<void(const EpisodeStats&)>& on_episode) {
  if (episodes < 0) throw ConfigError("episode count must be non-negative");
  std::vector<EpisodeStats> curve;
  curve.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    curve.push_back(train_episode(env));
    if (on_episode) on_episode(curve.back());
  }
  return curve;
}

void MappoTrainer::save(const std::filesystem::path& path) const {
  std::vector<nn::Network> out;
  for (const auto& n : nets_) {
    out.push_back({n.policy_spec, n.policy});
    out.push_back({n.value_spec, n.value});
  }
  nn::write_networks(path, out);
}

void MappoTrainer::load(const std::filesystem::path& path) {
  const auto in = nn::read_networks(path);
  if (in.size() != 2 * nets_.size())
    throw ValidationError(fmt::format("checkpoint {} holds {} networks, expected {}", path.string(), in.size(),
                                      2 * nets_.size()));
  for (std::size_t g = 0; g < nets_.size(); ++g) {
    const auto& p = in[2 * g];
    const auto& v = in[2 * g + 1];
    if (!(p.spec == nets_[g].policy_spec) || !(v.spec == nets_[g].value_spec))
      throw ValidationError(
          fmt::format("checkpoint {} does not match the shape of agent group '{}'", path.string(), groups_[g].name));
  }
  for (std::size_t g = 0; g < nets_.size(); ++g) {
    nets_[g].policy = in[2 * g].params;
    nets_[g].value = in[2 * g + 1].params;
    nets_[g].policy_opt = nn::AdamState(nets_[g].policy.size(), config_.learning_rate);
    nets_[g].value_opt = nn::AdamState(nets_[g].value.size(), config_.learning_rate);
  }
  have_obs_ = false;
}

std::vector<AgentGroupSpec> BanditEnv::groups() const { return {{"bandit", 1, 1, 1, 2}}; }

Observation BanditEnv::observe() const {
  Observation o;
  o.views.resize(1);
  o.views[0].push_back({{1.0}, {1.0}, {1, 1}, true});
  return o;
}

Observation BanditEnv::reset() { return observe(); }

StepResult BanditEnv::step(const std::vector<std::vector<int>>& actions) {
  const int a = actions.at(0).at(0);
  if (a < 0 || a > 1) throw PreconditionError(fmt::format("bandit action {} out of range", a));
  StepResult r;
  r.rewards = {{rewards_[a]}};
  r.done = true;
  r.next = observe();
  return r;
}

}  // namespace mdfl::marl
