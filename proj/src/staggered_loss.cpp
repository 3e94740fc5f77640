#include "nstagger/staggered_loss.hpp"

#include "nstagger/errors.hpp"

namespace nstagger {

std::vector<Tensor> predict_block(const ModelParams& params, const std::vector<Tensor>& states,
                                  const StaggerFactors& factors,
                                  const std::vector<SubtaskContext>& contexts, WorkerPool* pool) {
    const std::size_t s_t = factors.s_t, s_h = factors.s_h, s_w = factors.s_w;
    if (states.size() != s_t) {
        throw LayoutError("predict_block expects " + std::to_string(s_t) + " input frames, got " +
                          std::to_string(states.size()));
    }
    if (contexts.size() != s_h * s_w) {
        throw LayoutError("predict_block expects one context per subgrid");
    }
    std::vector<SubtaskInput> inputs;
    inputs.reserve(factors.subtask_count());
    for (std::size_t k = 0; k < s_t; ++k)
        for (std::size_t i = 0; i < s_h; ++i)
            for (std::size_t j = 0; j < s_w; ++j) {
                const Tensor sub = subsample(states[k], s_h, s_w, i, j);
                inputs.push_back({i, j, k, contexts[i * s_w + j].assemble(sub)});
            }

    std::vector<Tensor> outs;
    if (pool != nullptr) {
        outs = ensemble_forward(params, inputs, factors, *pool);
    } else {
        outs.reserve(inputs.size());
        for (const auto& in : inputs) {
            const Tensor y = forward(params, in.input);
            outs.push_back(reshape(y, Shape{y.shape()[1], y.shape()[2]}));
        }
    }

    std::vector<Tensor> preds;
    preds.reserve(s_t);
    for (std::size_t k = 0; k < s_t; ++k) {
        std::vector<Tensor> parts(outs.begin() + static_cast<long>(k * s_h * s_w),
                                  outs.begin() + static_cast<long>((k + 1) * s_h * s_w));
        preds.push_back(stagger_merge(parts, s_h, s_w));
    }
    return preds;
}

Tensor staggered_loss(const std::vector<Tensor>& states, const ModelParams& params,
                      const StaggerFactors& factors, const ResidualOperator& op,
                      const std::vector<SubtaskContext>& contexts, WorkerPool* pool) {
    const auto preds = predict_block(params, states, factors, contexts, pool);
    Tensor loss = msr_loss({op(states.back(), preds[0])});
    for (std::size_t k = 1; k < preds.size(); ++k) {
        loss = add(loss, msr_loss({op(preds[k - 1], preds[k])}));
    }
    return loss;
}

Tensor staggered_loss(const FieldSequence& input_seq, const ModelParams& params,
                      const StaggerFactors& factors, const ResidualOperator& op,
                      const std::vector<SubtaskContext>& contexts, WorkerPool* pool) {
    std::vector<Tensor> states;
    states.reserve(input_seq.size());
    for (const auto& f : input_seq.frames) states.push_back(op.to_state(f));
    return staggered_loss(states, params, factors, op, contexts, pool);
}

} // namespace nstagger
