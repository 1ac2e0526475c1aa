#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdfl/nn.hpp"

namespace mdfl::marl {

// Agents of one group share a policy network and a centralized value
// network.
struct AgentGroupSpec {
  std::string name;
  std::size_t num_agents = 1;
  std::size_t obs_dim = 1;
  std::size_t value_dim = 1;  // input size of the value network
  std::size_t num_actions = 2;
};

struct AgentView {
  std::vector<double> obs;
  std::vector<double> value_input;
  std::vector<std::uint8_t> action_mask;
  bool active = false;
};

// views[group][agent]
struct Observation {
  std::vector<std::vector<AgentView>> views;
};

struct StepResult {
  std::vector<std::vector<double>> rewards;  // [group][agent]
  bool done = false;
  Observation next;
};

class MultiAgentEnv {
 public:
  virtual ~MultiAgentEnv() = default;
  virtual std::vector<AgentGroupSpec> groups() const = 0;
  virtual Observation reset() = 0;
  // actions[group][agent]; entries of inactive agents are ignored.
  virtual StepResult step(const std::vector<std::vector<int>>& actions) = 0;
};

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double learning_rate = 5e-4;
  int steps_per_trajectory = 100;  // T_s
  int batch_trajectories = 1;      // Z
  int epochs = 1;
  bool normalize_advantages = true;
  std::vector<std::size_t> hidden = {64, 64};

  void validate() const;
};

// delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t, accumulated with
// (gamma * lambda)^l inside the trajectory. `values` has one entry per step;
// `bootstrap` is V of the state after the last step.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                        double gamma, double lambda, std::span<const std::uint8_t> dones);
std::vector<double> td_errors(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                              double gamma, std::span<const std::uint8_t> dones);
// R_t = sum_{l >= 0} gamma^l r_{t+l} up to the end of the sequence.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);
// Same, restarting the sum after every done flag.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma,
                                       std::span<const std::uint8_t> dones);

// One stored decision of one agent.
struct Sample {
  std::vector<double> obs;
  std::vector<double> value_input;
  std::vector<std::uint8_t> action_mask;
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
  bool active = false;
};

struct GroupNets {
  nn::NetSpec policy_spec;
  nn::NetSpec value_spec;
  nn::ParamVector policy;
  nn::ParamVector value;
  nn::AdamState policy_opt;
  nn::AdamState value_opt;
};

GroupNets make_group_nets(const AgentGroupSpec& spec, const PpoConfig& config, nn::Rng& rng);

struct LossStats {
  double policy_loss = 0.0;  // minimized form: -(clipped surrogate) - sigma * entropy
  double value_loss = 0.0;
  double entropy = 0.0;
  std::size_t samples = 0;     // active samples used
  std::size_t clipped = 0;     // samples whose clipped branch was selected
};

struct Gradients {
  nn::ParamVector policy;
  nn::ParamVector value;
};

// Loss and gradients over the active samples; inactive samples contribute
// nothing.
LossStats ppo_gradients(const GroupNets& nets, std::span<const Sample> samples, double clip, double entropy_coef,
                        Gradients& grads);

// Clipped policy objective term for one sample and which branch won.
struct ClipTerm {
  double objective = 0.0;
  double factor = 1.0;  // multiplier applied to the advantage
  bool clipped_branch = false;
};
ClipTerm clipped_surrogate(double ratio, double advantage, double clip);
double clipped_value_loss(double value, double value_old, double target, double clip);

struct EpisodeStats {
  int episode = 0;
  double accumulated_reward = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

class MappoTrainer {
 public:
  MappoTrainer(std::vector<AgentGroupSpec> groups, PpoConfig config, std::uint64_t seed);

  const std::vector<AgentGroupSpec>& groups() const { return groups_; }
  const PpoConfig& config() const { return config_; }
  GroupNets& nets(std::size_t g) { return nets_[g]; }
  const GroupNets& nets(std::size_t g) const { return nets_[g]; }

  // Collects Z trajectories of T_s steps from `env` (auto-resetting on
  // done), computes returns and advantages, then runs the PPO update.
  EpisodeStats train_episode(MultiAgentEnv& env);
  std::vector<EpisodeStats> train(MultiAgentEnv& env, int episodes,
                                  const std::function<void(const EpisodeStats&)>& on_episode = {});

  // Collection only (no update); exposed for tests.
  struct Batch {
    std::vector<std::vector<Sample>> samples;  // [group] flattened over trajectories/agents/steps
    double accumulated_reward = 0.0;
  };
  Batch collect(MultiAgentEnv& env);
  LossStats update(Batch& batch);

  std::vector<double> action_probs(std::size_t group, const AgentView& view) const;
  int greedy_action(std::size_t group, const AgentView& view) const;
  double value(std::size_t group, std::span<const double> value_input) const;

  // Policy and value networks of every group, in group order.
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  std::vector<AgentGroupSpec> groups_;
  PpoConfig config_;
  std::vector<GroupNets> nets_;
  nn::Rng rng_;
  bool have_obs_ = false;
  Observation obs_;
  int episode_ = 0;
};

// Single-agent two-armed bandit used to sanity-check the trainer.
class BanditEnv : public MultiAgentEnv {
 public:
  BanditEnv(double reward_a = 1.0, double reward_b = 0.2) : rewards_{reward_a, reward_b} {}
  std::vector<AgentGroupSpec> groups() const override;
  Observation reset() override;
  StepResult step(const std::vector<std::vector<int>>& actions) override;

 private:
  Observation observe() const;
  double rewards_[2];
};

}  // namespace mdfl::marl
