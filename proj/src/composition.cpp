#include "bridgets/composition.hpp"

#include <stdexcept>

namespace bridgets {

PriorStack stack_priors(const std::vector<PriorEstimate>& estimates) {
    if (estimates.empty()) throw std::invalid_argument("stack_priors: empty estimate list");
    const Array2& first = estimates.front().values;
    for (size_t i = 1; i < estimates.size(); ++i)
        if (!estimates[i].values.same_shape(first))
            throw std::invalid_argument("stack_priors: estimate '" + estimates[i].source_id +
                                        "' has mismatched shape");

    PriorStack stack;
    const int n = static_cast<int>(estimates.size());
    stack.values = Array3(first.rows, first.cols, n);
    for (int i = 0; i < n; ++i) {
        stack.source_ids.push_back(estimates[i].source_id);
        const Array2& est = estimates[i].values;
        for (int l = 0; l < first.rows; ++l)
            for (int c = 0; c < first.cols; ++c)
                stack.values.at(l, c, i) = est.at(l, c);
    }
    return stack;
}

ReplicatedTarget replicate_target(const TimeSeriesWindow& target, int n) {
    if (n < 1) throw std::invalid_argument("replicate_target: n must be >= 1");
    ReplicatedTarget rep;
    rep.values = Array3(target.values.rows, target.values.cols, n);
    for (int l = 0; l < target.values.rows; ++l)
        for (int c = 0; c < target.values.cols; ++c) {
            const double v = target.values.at(l, c);
            for (int i = 0; i < n; ++i) rep.values.at(l, c, i) = v;
        }
    return rep;
}

Array2 fuse_output(const Array3& stacked) {
    Array2 out(stacked.rows, stacked.cols);
    const double inv_n = 1.0 / stacked.depth;
    for (int l = 0; l < stacked.rows; ++l)
        for (int c = 0; c < stacked.cols; ++c) {
            double acc = 0.0;
            for (int n = 0; n < stacked.depth; ++n) acc += stacked.at(l, c, n);
            out.at(l, c) = acc * inv_n;
        }
    return out;
}

}  // namespace bridgets
