// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "orbiter360/core/tensor.hpp"

namespace orbiter360 {

/// Named trainable array. Gradients accumulate into `grad` during the
/// backward pass only while `trainable` is set; frozen parameters keep an
/// exactly zero gradient buffer.
template <typename Scalar> struct Parameter {
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool trainable = true;
};

/// Registry of parameters keyed by stable, namespaced names such as
/// "backbone/down0/res0/conv1/weight". Iteration order is lexicographic, so
/// serialization and optimizer sweeps are deterministic.
template <typename Scalar> class ParamStore {
  public:
    using Init = std::function<void(Tensor<Scalar>&)>;

    Parameter<Scalar>& create(const std::string& name, Shape shape, const Init& init) {
        if (params_.count(name)) throw IntegrationError("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<Scalar>>();
        p->name = name;
        p->value = Tensor<Scalar>(shape);
        p->grad = Tensor<Scalar>(std::move(shape));
        if (init) init(p->value);
        auto& ref = *p;
        params_.emplace(name, std::move(p));
        return ref;
    }

    Parameter<Scalar>* find(const std::string& name) {
        auto it = params_.find(name);
        return it == params_.end() ? nullptr : it->second.get();
    }

    Parameter<Scalar>& get(const std::string& name) {
        if (auto* p = find(name)) return *p;
        throw IntegrationError("unknown parameter: " + name);
    }

    template <typename Fn> void forEach(Fn&& fn) {
        for (auto& [name, p] : params_) fn(*p);
    }

    template <typename Fn> void forEach(Fn&& fn) const {
        for (const auto& [name, p] : params_) fn(static_cast<const Parameter<Scalar>&>(*p));
    }

    template <typename Fn> void forEachPrefix(const std::string& prefix, Fn&& fn) {
        for (auto it = params_.lower_bound(prefix); it != params_.end(); ++it) {
            if (it->first.compare(0, prefix.size(), prefix) != 0) break;
            fn(*it->second);
        }
    }

    void setTrainablePrefix(const std::string& prefix, bool trainable) {
        bool any = false;
        forEachPrefix(prefix, [&](Parameter<Scalar>& p) {
            p.trainable = trainable;
            any = true;
        });
        if (!any) throw IntegrationError("no parameters under namespace: " + prefix);
    }

    void setTrainableAll(bool trainable) {
        forEach([&](Parameter<Scalar>& p) { p.trainable = trainable; });
    }

    void zeroGrad() {
        forEach([](Parameter<Scalar>& p) { p.grad.setZero(); });
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (auto& [name, p] : params_) out.push_back(name);
        return out;
    }

    std::size_t size() const { return params_.size(); }

    Index totalElements() const {
        Index n = 0;
        for (auto& [name, p] : params_) n += p->value.numel();
        return n;
    }

  private:
    std::map<std::string, std::unique_ptr<Parameter<Scalar>>> params_;
};

template <typename Scalar> class Tape;

/// One value in the computation graph together with the closure that routes
/// its gradient to its parents.
template <typename Scalar> struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requiresGrad = false;
    Parameter<Scalar>* param = nullptr;
    std::vector<Node*> parents;
    std::function<void(Node&)> back;
    bool visited = false;

    Tensor<Scalar>& ensureGrad() {
        if (grad.empty() && value.numel() > 0) grad = Tensor<Scalar>(value.shape());
        return grad;
    }

    /// Accumulate `g` into a parent, skipping parents that do not need it.
    static void addGrad(Node* parent, const Tensor<Scalar>& g) {
        if (!parent->requiresGrad) return;
        parent->ensureGrad().array() += g.array();
    }
};

template <typename Scalar> using Var = Node<Scalar>*;

/// Reverse-mode tape. Nodes live in a deque so pointers stay stable; a tape
/// records one forward pass and is discarded (or reset) afterwards. With
/// `gradEnabled == false` the tape records values only, which is what the
/// samplers use at inference time.
template <typename Scalar> class Tape {
  public:
    explicit Tape(bool gradEnabled = true) : gradEnabled_(gradEnabled) {}

    bool gradEnabled() const { return gradEnabled_; }

    /// Constant input; gradients never flow into it.
    Var<Scalar> input(Tensor<Scalar> v) {
        Node<Scalar>& n = fresh();
        n.value = std::move(v);
        return &n;
    }

    /// Non-parameter leaf that wants a gradient (used by gradient checks).
    Var<Scalar> leaf(Tensor<Scalar> v) {
        Node<Scalar>& n = fresh();
        n.value = std::move(v);
        n.requiresGrad = gradEnabled_;
        return &n;
    }

    /// Parameter leaf. Repeated lookups of the same parameter share a node,
    /// so weight sharing accumulates correctly.
    Var<Scalar> param(Parameter<Scalar>& p) {
        auto it = paramNodes_.find(&p);
        if (it != paramNodes_.end()) return it->second;
        Node<Scalar>& n = fresh();
        n.value = p.value;
        n.param = &p;
        n.requiresGrad = gradEnabled_ && p.trainable;
        paramNodes_.emplace(&p, &n);
        return &n;
    }

    /// Core op constructor: value, parent list and the backward closure.
    Var<Scalar> make(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                     std::function<void(Node<Scalar>&)> back) {
        Node<Scalar>& n = fresh();
        n.value = std::move(value);
        if (gradEnabled_) {
            for (Var<Scalar> p : parents)
                if (p->requiresGrad) {
                    n.requiresGrad = true;
                    break;
                }
            if (n.requiresGrad) {
                n.parents = std::move(parents);
                n.back = std::move(back);
            }
        }
        return &n;
    }

    /// Backpropagate from a scalar loss. Parameter gradients are accumulated
    /// into their stores; frozen parameters are untouched.
    void backward(Var<Scalar> loss) {
        ORBITER360_CHECK(loss->value.numel() == 1, "backward expects a scalar loss");
        if (!loss->requiresGrad) return;
        std::vector<Node<Scalar>*> order;
        order.reserve(nodes_.size());
        topo(loss, order);
        loss->ensureGrad().fill(Scalar(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<Scalar>* n = *it;
            if (n->back && !n->grad.empty()) n->back(*n);
        }
        for (auto& [p, node] : paramNodes_) {
            if (node->requiresGrad && !node->grad.empty() && p->trainable)
                p->grad.array() += node->grad.array();
        }
        for (Node<Scalar>* n : order) n->visited = false;
    }

    void reset() {
        nodes_.clear();
        paramNodes_.clear();
    }

    std::size_t nodeCount() const { return nodes_.size(); }

  private:
    Node<Scalar>& fresh() { return nodes_.emplace_back(); }

    void topo(Node<Scalar>* root, std::vector<Node<Scalar>*>& order) {
        std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        root->visited = true;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node<Scalar>* p = node->parents[next++];
                if (!p->visited && p->requiresGrad) {
                    p->visited = true;
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    bool gradEnabled_;
    std::deque<Node<Scalar>> nodes_;
    std::map<Parameter<Scalar>*, Var<Scalar>> paramNodes_;
};

} // namespace orbiter360
