#pragma once

#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "flexicrime/model.hpp"

namespace flexicrime {

// Packed segment s spans [seg_lo, seg_hi]: segment s ends at event s, and
// segment n (one past the last event) runs to the end of the packed day.
double seg_lo(const PackedSequence& seq, int segment);
double seg_hi(const PackedSequence& seq, int segment);
// day feature attached to a segment: the day of the event terminating it
int seg_day(const PackedSequence& seq, int segment);

// Stored hidden-path values (per-segment RK4 step grids and per-event states)
// so density sweeps and later chunks can reference an already-integrated
// prefix as constants.
struct PathValues {
    int steps = 0;
    int hidden_dim = 0;
    std::vector<std::vector<double>> seg_nodes; // (steps+1)*dh per segment, dh when zero-width
    std::vector<std::vector<double>> h_pre, h_post;

    void resize(int n_events) {
        seg_nodes.assign(static_cast<size_t>(n_events) + 1, {});
        h_pre.assign(static_cast<size_t>(n_events), {});
        h_post.assign(static_cast<size_t>(n_events), {});
    }
};

struct HiddenSegment {
    int index = -1; // global segment index
    double lo = 0.0, hi = 0.0;
    std::vector<ad::Var> nodes; // steps+1 boundary states (1 when zero width)
};

struct PathBuildResult {
    std::vector<HiddenSegment> segments;
    std::vector<ad::Var> h_pre, h_post; // events [i0, i1)
    int first_event = 0;
    ad::Var h_end;
    ad::Var lambda_integral; // over the built range, on the solver grid
};

// lambda = softplus(w . h + b), strictly positive.
ad::Var temporal_intensity(Binder& b1, const ProcessParams& proc, ad::Var h);
double temporal_intensity_value(const ProcessParams& proc, std::span<const double> h);

// One continuous leg: h' = h + int f_t, fixed-step RK4, recording the step
// grid. Optionally accumulates int lambda over the leg into the running
// scalar. Throws NumericError when the state leaves the finite range.
struct SegmentEvolveResult {
    std::vector<ad::Var> nodes;
    ad::Var h_end;
    ad::Var lambda_integral; // valid when requested
};
SegmentEvolveResult evolve_hidden(Binder& b1, const ProcessParams& proc, ad::Var h, double tau_from,
                                  double tau_to, std::span<const double> day_features, int steps,
                                  std::optional<ad::Var> lambda_acc = std::nullopt);

// GRU-gated instantaneous update at an event; the type half of the
// target-aware encoding carries the cross-type relevance.
ad::Var jump_hidden(Binder& b0, Binder& b1, const Model& model, const ProcessParams& proc,
                    const PackedEvent& event, ad::Var h_pre);

// Hidden path over packed positions [i0, i1) starting from h_start at
// tau_start, ending at tau_end with a trailing continuous leg.
PathBuildResult build_hidden_path(Binder& b0, Binder& b1, const Model& model,
                                  const ProcessParams& proc, const PackedSequence& seq, int i0,
                                  int i1, ad::Var h_start, double tau_start, double tau_end,
                                  int steps);

// Resolves hidden-state lookups for the spatial flow: live tape nodes where
// the current build covers them, stored values (as constants) elsewhere.
class HiddenAccess {
public:
    HiddenAccess(ad::Tape& tape, const PackedSequence& seq, int steps);

    void attach_live(const PathBuildResult& built);
    void attach_stored(const PathValues* stored) { stored_ = stored; }

    ad::Var h_at(int segment, double tau); // linear interpolation on the step grid
    ad::Var h_pre_event(int pos);

private:
    const std::vector<ad::Var>* live_segment(int segment) const;

    ad::Tape& tape_;
    const PackedSequence& seq_;
    int steps_;
    const PathBuildResult* live_ = nullptr;
    const PathValues* stored_ = nullptr;
    std::unordered_map<int, std::vector<ad::Var>> stored_nodes_; // materialized constants
    std::unordered_map<int, ad::Var> stored_pre_;
    std::unordered_map<uint64_t, ad::Var> interp_;
};

// Affine-coupling jump of the spatial flow, conditioned on (tau, h, cc).
// Forward maps pre-jump to post-jump; inverse returns (pre-jump state,
// forward log|det|).
ad::Var coupling_forward(Binder& b1, const ProcessParams& proc, ad::Var s, ad::Var cond);
std::pair<ad::Var, ad::Var> coupling_inverse(Binder& b1, const ProcessParams& proc, ad::Var s_post,
                                             ad::Var cond);

// log p*(s | tau_bar): base Gaussian of the pre-image, minus integrated
// Jacobian traces per traversed segment, minus per-jump log-determinants.
// max_jumps == 0 keeps the entire history (the base then sits at tau = 0);
// otherwise the base anchors at the oldest retained jump.
ad::Var spatial_log_density_var(Binder& b1, const ProcessParams& proc, const PackedSequence& seq,
                                HiddenAccess& hidden,
                                std::span<const std::vector<double>> event_cc, double tau_bar,
                                double x, double y, int steps, int max_jumps);

struct LikelihoodParts {
    ad::Var total;
    ad::Var event_sum;       // sum of log lambda at target events
    ad::Var survival;        // day_span * int_0^1 lambda
    ad::Var spatial_sum;     // sum of spatial log densities
};

// Full-sequence compound log-likelihood on one tape (used by the op contract,
// gradient checks, and held-out evaluation; training chunks internally).
LikelihoodParts log_likelihood_var(Binder& b0, Binder& b1, const Model& model,
                                   const ProcessParams& proc, const PackedSequence& seq,
                                   std::span<const std::vector<double>> event_cc, int steps,
                                   int max_jumps);

double log_likelihood_value(const Model& model, int type, const PackedSequence& seq,
                            std::span<const std::vector<double>> event_cc);

struct MleOptions {
    int epochs = 50;
    double lr = 0.01;
    double weight_decay = 0.0;
    int chunk_events = 128;
    int steps = 20;
    int max_jumps = 0;
    double clip_norm = 2.0; // per-chunk gradient norm ceiling
    // warm-start the intensity bias at the empirical mean rate (the
    // constant-rate MLE); training then learns the modulation around it
    bool init_rate_bias = true;
    // adam rescaling for the chunk steps; plain gradient descent otherwise
    bool adam = true;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
};

// Maximizes the packed-sequence likelihood with truncated streaming chunks;
// theta_0 stays frozen (its blocks enter the graph as constants). Returns the
// per-epoch negative log-likelihood trace. Throws NumericError on divergence
// and DataError when the sequence has no target events. `refresh_cc`, when
// given, redraws the jump conditioning contexts before each epoch (the
// sampler is seeded per epoch), which keeps the couplings from memorizing
// per-event context fingerprints.
std::vector<double> train_mle(Model& model, int type, const PackedSequence& seq,
                              const std::vector<std::vector<double>>& event_cc,
                              const MleOptions& opt,
                              const std::function<std::vector<std::vector<double>>(int)>&
                                  refresh_cc = {});

// Value-only view of a trained process over a packed history: integrates the
// whole path once, then answers intensity/density queries from stored values.
class FrozenProcess {
public:
    FrozenProcess(const Model& model, int type, const PackedSequence& seq,
                  const std::vector<std::vector<double>>& event_cc);

    std::vector<double> h_at(double tau) const; // left limit
    double lambda_at(double tau) const;
    double spatial_log_density(double tau, double x, double y) const;
    // log lambda*(tau, s) = log lambda*(tau) + log p*(s | tau)
    double log_risk(double tau, double x, double y) const;
    double lambda_integral() const { return lambda_integral_; }

    const PackedSequence& sequence() const { return *seq_; }

private:
    const Model* model_;
    const ProcessParams* proc_;
    const PackedSequence* seq_;
    const std::vector<std::vector<double>>* event_cc_;
    PathValues values_;
    double lambda_integral_ = 0.0;
};

// Inputs of the evolving-feature encoder at an absolute query time.
struct EvolvingInputs {
    double log_risk = 0.0;
    std::vector<double> h;
    int day = 0;
};

EvolvingInputs evolving_inputs(const FrozenProcess& frozen, const Model& model, int grid,
                               double t_abs);

// V~(t) = MLP(log risk, h_tau, day features, dt, ds).
ad::Var evolving_feature_var(Binder& b2, const Model& model, const EvolvingInputs& in,
                             double gap_days, double cell_area);

} // namespace flexicrime
