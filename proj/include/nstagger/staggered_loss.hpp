#pragma once

// Joint physics-constrained loss over a staggered ensemble: decompose the
// s_T input frames, run every (i, j, k) subtask through the shared model,
// reconstruct the predicted fine frames, and sum the MSR of the s_T
// consecutive residual pairs on the fine grid.

#include "nstagger/model.hpp"
#include "nstagger/residuals.hpp"

#include <vector>

namespace nstagger {

/// Predicted fine state tensors [H,W] for offsets 0..s_T-1, given the s_T
/// input states. Subtasks fan out on `pool` when it is non-null.
std::vector<Tensor> predict_block(const ModelParams& params, const std::vector<Tensor>& states,
                                  const StaggerFactors& factors,
                                  const std::vector<SubtaskContext>& contexts,
                                  WorkerPool* pool = nullptr);

/// Sum over the s_T pairs (last input -> first prediction, then adjacent
/// predictions) of msr_loss(op(prev, next)).
Tensor staggered_loss(const std::vector<Tensor>& states, const ModelParams& params,
                      const StaggerFactors& factors, const ResidualOperator& op,
                      const std::vector<SubtaskContext>& contexts, WorkerPool* pool = nullptr);

Tensor staggered_loss(const FieldSequence& input_seq, const ModelParams& params,
                      const StaggerFactors& factors, const ResidualOperator& op,
                      const std::vector<SubtaskContext>& contexts, WorkerPool* pool = nullptr);

} // namespace nstagger
