#pragma once

#include <Eigen/Dense>
#include <numeric>
#include <string>
#include <vector>

#include "util.hpp"

namespace gridflow {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Dense named tensor; flat storage plus a shape, mapped onto Eigen views
// where math happens.
template <typename S>
struct Tensor {
    std::vector<S> v;
    std::vector<int> shape;

    Tensor() = default;
    explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
        v.assign(count(), S(0));
    }

    size_t count() const {
        size_t n = 1;
        for (int d : shape) n *= size_t(d);
        return n;
    }
    S* data() { return v.data(); }
    const S* data() const { return v.data(); }
    void zero() { std::fill(v.begin(), v.end(), S(0)); }

    Eigen::Map<RowMat<S>> mat(int rows, int cols) {
        check(size_t(rows) * cols == v.size(), ErrCode::dimension, "tensor view shape mismatch");
        return Eigen::Map<RowMat<S>>(v.data(), rows, cols);
    }
    Eigen::Map<const RowMat<S>> mat(int rows, int cols) const {
        check(size_t(rows) * cols == v.size(), ErrCode::dimension, "tensor view shape mismatch");
        return Eigen::Map<const RowMat<S>>(v.data(), rows, cols);
    }
    Eigen::Map<RowMat<S>> mat2() { return mat(shape.at(0), int(v.size() / shape.at(0))); }
    Eigen::Map<const RowMat<S>> mat2() const { return mat(shape.at(0), int(v.size() / shape.at(0))); }
    Eigen::Map<VecX<S>> vec() { return Eigen::Map<VecX<S>>(v.data(), v.size()); }
    Eigen::Map<const VecX<S>> vec() const { return Eigen::Map<const VecX<S>>(v.data(), v.size()); }
};

// A learnable tensor registered with the model. `id` indexes gradient
// accumulators; `trainable` gates both optimizer updates and the
// weight-gradient work in backward passes.
template <typename S>
struct Param {
    std::string name;
    Tensor<S> w;
    int id = -1;
    bool trainable = true;

    Param() = default;
    Param(std::string n, std::vector<int> shape) : name(std::move(n)), w(std::move(shape)) {}
};

template <typename S>
struct ParamSet {
    std::vector<Param<S>*> items;

    void add(Param<S>& p) {
        p.id = int(items.size());
        items.push_back(&p);
    }
    void add_all(const std::vector<Param<S>*>& ps) {
        for (auto* p : ps) add(*p);
    }
    size_t total_count() const {
        size_t n = 0;
        for (auto* p : items) n += p->w.count();
        return n;
    }
    Param<S>* find(const std::string& name) const {
        for (auto* p : items)
            if (p->name == name) return p;
        return nullptr;
    }
};

// Gradient accumulator parallel to a ParamSet. Workers each own one and the
// buffers are reduced in a fixed order, so training results do not depend on
// scheduling.
template <typename S>
struct GradAccum {
    std::vector<Tensor<S>> g;

    GradAccum() = default;
    explicit GradAccum(const ParamSet<S>& ps) { reset_layout(ps); }

    void reset_layout(const ParamSet<S>& ps) {
        g.clear();
        g.reserve(ps.items.size());
        for (auto* p : ps.items) g.emplace_back(p->w.shape);
    }
    void zero() {
        for (auto& t : g) t.zero();
    }
    Tensor<S>& of(const Param<S>& p) { return g[size_t(p.id)]; }

    void add(const GradAccum<S>& other, S scale = S(1)) {
        for (size_t i = 0; i < g.size(); ++i) {
            auto a = g[i].vec();
            a += scale * other.g[i].vec();
        }
    }
    void scale(S s) {
        for (auto& t : g) t.vec() *= s;
    }
    bool all_finite() const {
        for (const auto& t : g)
            for (S x : t.v)
                if (!std::isfinite(double(x))) return false;
        return true;
    }
};

}  // namespace gridflow
