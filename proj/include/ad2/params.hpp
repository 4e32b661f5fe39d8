#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ad2/errors.hpp"
#include "ad2/graph.hpp"
#include "ad2/tensor.hpp"

namespace ad2 {

// Ordered collection of named float parameters. Order of insertion defines
// serialization and optimizer traversal order.
class ParamStore {
public:
    Tensor<float>& add(const std::string& name, Tensor<float> t) {
        if (index_.count(name)) throw InvariantError("duplicate parameter: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<float>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvariantError("unknown parameter: " + name);
        return tensors_[it->second];
    }

    const Tensor<float>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvariantError("unknown parameter: " + name);
        return tensors_[it->second];
    }

    std::size_t count() const { return names_.size(); }
    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvariantError("unknown parameter: " + name);
        return it->second;
    }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor<float>& tensor(std::size_t i) { return tensors_[i]; }
    const Tensor<float>& tensor(std::size_t i) const { return tensors_[i]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<float>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binds a ParamStore into a graph, casting to the graph scalar type. Keeps
// the mapping so gradients can be read back per name after backward().
template <class T>
class BoundParams {
public:
    BoundParams(Graph<T>& g, const ParamStore& store, bool needs_grad) : graph_(&g), store_(&store) {
        vars_.reserve(store.count());
        for (std::size_t i = 0; i < store.count(); ++i)
            vars_.push_back(g.leaf(store.tensor(i).template cast<T>(), needs_grad));
    }

    Var operator[](const std::string& name) const { return vars_[store_->index_of(name)]; }

    std::size_t count() const { return vars_.size(); }
    Var var(std::size_t i) const { return vars_[i]; }
    const Tensor<T>& grad(std::size_t i) const { return graph_->grad(vars_[i]); }

private:
    Graph<T>* graph_;
    const ParamStore* store_;
    std::vector<Var> vars_;
};

// FNV-1a over parameter names and raw float bytes, in store order.
inline std::uint64_t param_hash(const ParamStore& store) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (std::size_t i = 0; i < store.count(); ++i) {
        const std::string& name = store.name(i);
        mix(name.data(), name.size());
        const auto& t = store.tensor(i);
        mix(t.data(), t.size() * sizeof(float));
    }
    return h;
}

// Fan-in scaled uniform init, kaiming-style bound for ReLU stacks.
inline void init_conv(Tensor<float>& w, Rng& rng) {
    if (w.rank() != 4) throw InvalidInput("init_conv: rank");
    const double fan_in = static_cast<double>(w.dim(0)) * w.dim(1) * w.dim(2);
    const float bound = static_cast<float>(std::sqrt(2.0 / fan_in));
    w.fill_uniform(rng, -bound, bound);
}

}  // namespace ad2
