#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalegmn/ffnn.hpp"
#include "scalegmn/graph.hpp"
#include "scalegmn/orbit.hpp"
#include "scalegmn/scalegmn.hpp"

namespace scalegmn {

/// max over grid rows of |u_a(x) - u_b(x)|.
double check_function_preservation(const FfnnParams& a, const FfnnParams& b, const Tensor& grid);

/// 16x16 coordinate grid for 2-d inputs, otherwise 256 seeded points in [-1, 1]^d.
Tensor evaluation_grid(Index input_dim, std::uint64_t seed = 0);

struct SymmetryReport {
  std::string name;
  std::vector<double> deviations;
  double max_deviation = 0.0;
  int trials = 0;
  double tolerance = 0.0;
  bool passed = true;
  std::uint64_t seed = 0;
  std::string config_hash;

  /// Merges by max deviation.
  void merge(const SymmetryReport& other);
};

nlohmann::json to_json(const SymmetryReport& r);

using NetSampler = std::function<FfnnParams(Rng&)>;
using OrbitSampler = std::function<OrbitElement(const FfnnParams&, Rng&)>;
using Embedder = std::function<Tensor(const FfnnParams&)>;
using Editor = std::function<FfnnParams(const FfnnParams&)>;

struct CertifyOptions {
  int nets = 5;
  int orbits_per_net = 50;
  double tolerance = 1e-8;
  std::uint64_t seed = 0;
};

/// Per trial |f(theta) - f(psi theta)|_inf / (|f(theta)|_inf + 1e-9).
SymmetryReport certify_invariance(const Embedder& f, const NetSampler& nets, const OrbitSampler& orbits,
                                  const CertifyOptions& opts);

/// Per trial |edit(psi theta) - psi(edit theta)|_inf over all parameters.
SymmetryReport certify_equivariance(const Editor& edit, const NetSampler& nets,
                                    const OrbitSampler& orbits, const CertifyOptions& opts);

/// Embedding (1 x out) of one net by an invariant-head model.
Embedder scalegmn_embedder(const ScaleGMNModel& model);
/// Edited net by an edit-head model.
Editor scalegmn_editor(const ScaleGMNModel& model);

/// Builds a net's graph in the direction a model expects.
ParamGraph graph_for(const ScaleGMNModel& model, const FfnnParams& net);

/// One vertex row is [bias, z, x, 1/grad_z, 1/grad_x]; one edge row is the
/// forward weight.
struct SimulationState {
  Tensor vertices;  // V x 5
  Tensor edges;     // E x 1
};

struct SimulationResult {
  std::vector<SimulationState> rounds;  // state after round 0 (init), 1, ..., 2L
  std::vector<Tensor> z;       // z_0 (= x_0), z_1..z_L, each 1 x d_l
  std::vector<Tensor> x;       // x_0..x_L
  std::vector<Tensor> grad_z;  // index l = dL/dz_l (l >= 1; entry 0 empty)
  std::vector<Tensor> grad_x;  // dL/dx_0..dL/dx_L
  ParamGraph graph;
};

/// Hand-wired ScaleGMN parameterisation that simulates a forward pass and
/// backpropagation. Inputs are single rows: x (1 x d_0) and the loss gradient
/// with respect to the output (1 x d_L). Layer-l vertices hold (z_l, x_l)
/// after l rounds and their inverse gradients after 2L - l rounds. Inverse
/// channels hold 0 until valid; a zero denominator in a valid round throws
/// NumericError naming the vertex. With `need_gradients` false only the
/// first L rounds run.
SimulationResult simulate_ffnn(const FfnnParams& net, const Tensor& x, const Tensor& output_grad,
                               bool need_gradients = true);

/// tau-b with tie correction (Knight's O(n log n) algorithm); 0 when either
/// ranking is constant. Throws Error for length < 2 or mismatched lengths.
double kendall_tau(const std::vector<double>& pred, const std::vector<double>& truth);
/// tau-a: (concordant - discordant) / (n (n - 1) / 2).
double kendall_tau_a(const std::vector<double>& pred, const std::vector<double>& truth);

double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace scalegmn
