#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ocdd/anchor.hpp"
#include "ocdd/ballworld.hpp"
#include "ocdd/checkpoint.hpp"
#include "ocdd/dataset.hpp"
#include "ocdd/schedule.hpp"

namespace ocdd::pipeline {

// ---- dataset generation ------------------------------------------------------

/// Simulate `count` trajectories per template; with augment, each record gets
/// a fresh uniform offset from [-1,1]^2. length 0 keeps the template default.
ballworld::Dataset gen_dataset(const std::vector<std::string>& templates, int count,
                               bool augment, uint64_t seed, int length = 0);

// ---- training ----------------------------------------------------------------

struct TrainConfig {
  std::string data_dir;
  std::string out_path;  // checkpoint path; loss CSV lands at out_path + "_loss.csv"
  acnet::ModelConfig model;
  int schedule_T = 256;
  double schedule_s = 0.008;
  int batch = 8;
  double lr = 1e-4;
  int max_steps = 50000;
  std::array<double, 3> cond_probs = {0.3, 0.4, 0.3};  // P(0/1/2 conditions per object)
  bool augment = true;          // fresh scene offset per drawn sample
  bool hard_conditioning = true;
  uint64_t seed = 0;
  int progress_every = 200;     // stdout progress cadence; 0 = quiet
};

struct TrainResult {
  int64_t steps = 0;
  double final_loss = 0;   // means over the trailing window
  double final_term1 = 0;
  double final_term2 = 0;
  std::string checkpoint_path;
};

TrainResult train(const TrainConfig& cfg);

/// Per movable object draws 0/1/2 conditions at distinct random steps, values
/// read from the ground truth; assembles the conditioning-net input
/// (zero-filled values, presence bit, static features).
struct CondDraw {
  anchor::ConditionSet cond;
  nd::Tensor cond_input;  // [O, L, cond_in_dim]
};

CondDraw sample_training_conditions(const nd::Tensor& x0, const std::array<double, 3>& probs,
                                    Rng& rng);

/// Conditioning-net input for a given condition set against scene statics.
nd::Tensor build_cond_input(const nd::Tensor& statics_like, const anchor::ConditionSet& cond);

// ---- sampling ------------------------------------------------------------------

struct SampleOptions {
  std::vector<int> snapshot_steps;  // diffusion steps at which to capture x0 estimates
};

struct SampleResult {
  nd::Tensor trajectory;  // [O, L, d]
  std::vector<std::pair<int, nd::Tensor>> snapshots;
  double max_condition_violation = 0.0;
};

/// x0 estimate from the current noisy state; anchoring is applied by the
/// sampler loop after each call.
using Predictor = std::function<nd::Tensor(const nd::Tensor& x_t, int t)>;

SampleResult sample_with_predictor(const Predictor& predict,
                                   const diffusion::NoiseSchedule& sched,
                                   const nd::Tensor& statics_tensor, const nd::Tensor& mask,
                                   const std::vector<bool>& movable,
                                   const anchor::ConditionSet& cond, uint64_t seed,
                                   const SampleOptions& opts = {});

/// Reverse diffusion from a checkpoint. Statics fully specify object count,
/// shapes, sizes and immutable positions; only changeable features of movable
/// objects are sampled from noise.
SampleResult sample_trajectories(const Checkpoint& ckpt,
                                 const std::vector<ballworld::ObjectSpec>& statics,
                                 const anchor::ConditionSet& cond, int L, uint64_t seed,
                                 const SampleOptions& opts = {});

/// Constant-position statics tensor for a scene (frame 0 state everywhere).
nd::Tensor statics_tensor(const std::vector<ballworld::ObjectSpec>& statics, int L);

// ---- evaluation ----------------------------------------------------------------

struct EvalOptions {
  int count = -1;       // limit; -1 = all records
  bool oracle = false;  // ground-truth-x0 predictor instead of the model
  uint64_t seed = 0;
};

struct TemplateStats {
  int count = 0;
  double median = 0;
  double mean = 0;
};

struct EvalReport {
  std::vector<double> per_traj;  // RMSE over masked entries, per trajectory
  double median = 0;
  double mean = 0;
  std::map<std::string, TemplateStats> per_template;
  std::string config_echo;  // JSON text
};

/// Conditions each trajectory on the initial states of its movable objects,
/// samples, and scores RMSE over masked entries against the simulator truth.
EvalReport evaluate_rmse(const Checkpoint& ckpt, const ballworld::Dataset& eval_set,
                         const EvalOptions& opts = {});

void write_eval_report(const std::string& path, const EvalReport& report);

struct SweepRow {
  std::string setting;  // "length" or "template"
  std::string label;
  int count = 0;
  double median = 0;
  double mean = 0;
};

std::vector<SweepRow> sweep_lengths(const Checkpoint& ckpt, const std::vector<int>& lengths,
                                    const std::string& template_name, int count, uint64_t seed);
std::vector<SweepRow> sweep_objects(const Checkpoint& ckpt,
                                    const std::vector<std::string>& templates, int count,
                                    uint64_t seed);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

double median_of(std::vector<double> values);

}  // namespace ocdd::pipeline
