#pragma once

#include <atomic>
#include <functional>
#include <utility>
#include <vector>

#include "dpcqa/tensor.hpp"

namespace dpcqa {

namespace detail {
inline std::atomic<int64_t>& node_counter() {
    static std::atomic<int64_t> counter{0};
    return counter;
}
}  // namespace detail

// Reverse-mode tape. Ops append records in creation order, which is a
// topological order by construction; backward replays them once, in reverse.
// One tape per forward pass; not shared across threads.
template <typename T>
class Tape {
  public:
    using BackwardFn = std::function<void()>;

    // Called by every op after computing its output. A record is kept only
    // when the output requires grad; pure-inference graphs cost nothing.
    void record(const TensorPtr<T>& output, std::vector<TensorPtr<T>> inputs, BackwardFn fn) {
        if (!output->requires_grad) return;
        for (auto& in : inputs) {
            if (in->node_id < 0) in->node_id = detail::node_counter()++;
            if (in->requires_grad) in->ensure_grad();
        }
        output->node_id = detail::node_counter()++;
        for (auto& in : inputs) {
            if (in->node_id >= output->node_id)
                throw std::logic_error("tape op inputs must precede the output");
        }
        output->ensure_grad();
        records_.push_back(Record{output, std::move(inputs), std::move(fn)});
    }

    // Seeds d(loss)/d(loss) = 1 and propagates through every recorded op.
    // Each requires_grad tensor reachable from loss ends up holding its
    // accumulated gradient. A second call without clear() is an error.
    void backward(const TensorPtr<T>& loss) {
        if (backward_done_)
            throw std::logic_error("backward called twice on the same tape; clear() first");
        if (loss->numel() != 1)
            throw ShapeError("backward requires a scalar loss, got shape " +
                             shape_str(loss->shape));
        if (!loss->requires_grad)
            throw std::logic_error("loss does not depend on any tracked parameter");
        backward_done_ = true;
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->fn();
    }

    void clear() {
        records_.clear();
        backward_done_ = false;
    }

    bool backward_done() const { return backward_done_; }
    size_t size() const { return records_.size(); }

  private:
    struct Record {
        TensorPtr<T> output;
        std::vector<TensorPtr<T>> inputs;
        BackwardFn fn;
    };
    std::vector<Record> records_;
    bool backward_done_ = false;
};

}  // namespace dpcqa
