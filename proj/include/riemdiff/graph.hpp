#pragma once

// Static computation graphs over double vectors.
//
// A Graph is built once (topological order by construction) and evaluated
// many times through a Workspace that owns four arenas: primal values,
// tangents, adjoints, and tangent-adjoints. The tangent arena carries a
// directional derivative (dv/dx)*u alongside the primal pass; the reverse
// sweep propagates adjoints of BOTH arenas, so a scalar that depends on
// tangent outputs (a divergence term, a flow derivative) still gets exact
// parameter gradients. That is the whole trick: forward-over-reverse with
// one extra pair of buffers instead of a second graph.
//
// The primitive set is closed and deliberately small; any shape mismatch or
// unsupported combination throws ContractError at construction, never later.

#include "riemdiff/common.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace riemdiff {

enum class Op : std::uint8_t {
    Input, Param, Const,
    MatVec,     // {W (r*c), x (c)} -> r
    MatMul,     // {A, B} square n*n -> n*n
    Transpose,  // {A} square n*n -> n*n
    Add, Sub, Mul, Div, // elementwise on equal lengths
    Scale,      // {s (1), v (n)} -> n
    ScaleConst, // c * v
    AddConst,   // v + c (broadcast scalar constant)
    Dot,        // {u, v} -> 1
    Sum,        // v -> 1
    Square,     // elementwise
    Sine, Cosine, Sigmoid, Softplus, Exp, Log,
    Concat,     // {a, b, ...} -> total
    Slice,      // window [offset, offset+dim) of the single input
};

struct Node {
    Op op;
    int dim = 0;
    std::vector<int> in;
    int rows = 0, cols = 0;      // MatVec shape / MatMul, Transpose order / Slice offset in rows
    double c = 0.0;              // ScaleConst, AddConst payload
    int slot = -1;               // Param: index into ParamValues
    std::vector<double> cdata;   // Const payload
};

// Parameter values live outside the graph so several graphs can share one
// set (the score network appears in the training loss, the sampler drift,
// and the divergence field). Slot order is the declaration order, which is
// also the flattening order used by checkpoints and the optimizer.
struct ParamValues {
    std::vector<std::vector<double>> slots;

    void zero();
    std::size_t total_size() const;
};

class Graph {
public:
    int input(int dim);
    int param(int dim);
    int constant(std::vector<double> values);

    int matvec(int W, int x, int rows, int cols);
    int matmul(int A, int B, int n);
    int transpose(int A, int n);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);
    int scale(int s, int v);
    int scale_const(double c, int v);
    int add_const(double c, int v);
    int dot(int a, int b);
    int sum(int v);
    int square(int v);
    int sine(int v);
    int cosine(int v);
    int sigmoid(int v);
    int softplus(int v);
    int exp(int v);
    int log(int v);
    int concat(const std::vector<int>& parts);
    int slice(int v, int offset, int len);

    // swish(x) = x * sigmoid(x); composed from primitives so its derivative
    // is the analytic sigma(x) + x*sigma(x)*(1-sigma(x)) by construction.
    int swish(int v);

    int size() const { return int(nodes_.size()); }
    const Node& node(int id) const { return nodes_[std::size_t(id)]; }
    int num_param_slots() const { return int(param_dims_.size()); }
    int param_dim(int slot) const { return param_dims_[std::size_t(slot)]; }
    std::size_t total_dim() const { return total_dim_; }

    ParamValues make_params_zero() const;

private:
    int push(Node n);
    int check(int id, const char* who) const;

    std::vector<Node> nodes_;
    std::vector<int> param_dims_;
    std::size_t total_dim_ = 0;
};

class Workspace {
public:
    explicit Workspace(const Graph& g);

    void set_input(int input_node, std::span<const double> values);
    void set_input_scalar(int input_node, double value);

    // Primal sweep. Invalidates any previous tangent pass.
    void forward(const ParamValues& params);

    // Tangent sweep seeded at one input leaf; every other leaf's tangent is
    // zero. Requires a completed forward() with the same inputs.
    void forward_tangent(int input_node, std::span<const double> seed);

    void clear_adjoints();
    void seed_adjoint(int node, std::span<const double> values);
    void seed_adjoint_scalar(int node, double value);
    void seed_tangent_adjoint(int node, std::span<const double> values);
    void seed_tangent_adjoint_scalar(int node, double value);

    // Reverse sweep over the dual tape. Accumulates parameter gradients into
    // grad (shape-checked); pass nullptr to only fill leaf adjoints (vjp use).
    void backward(ParamValues* grad);

    std::span<const double> value(int node) const;
    std::span<const double> tangent(int node) const;
    std::span<const double> adjoint(int node) const;

private:
    const Graph* g_;
    std::vector<int> off_;
    std::vector<double> val_, tan_, adj_, tadj_;
    bool tangent_live_ = false;

    double* v(int id) { return val_.data() + off_[std::size_t(id)]; }
    double* t(int id) { return tan_.data() + off_[std::size_t(id)]; }
    double* a(int id) { return adj_.data() + off_[std::size_t(id)]; }
    double* ta(int id) { return tadj_.data() + off_[std::size_t(id)]; }
};

// Convenience wrappers used by tests and by callers that only need values.

// (df/dx) * v for the scalar-or-vector output node, by one tangent sweep.
std::vector<double> jvp(const Graph& g, Workspace& ws, int input_node, int output_node,
                        std::span<const double> v);

// u^T (df/dx) via reverse sweep; ws must hold a completed forward pass.
std::vector<double> vjp(const Graph& g, Workspace& ws, int input_node, int output_node,
                        std::span<const double> u);

// Central finite differences of a scalar callable; the reference every
// analytic gradient in this library is tested against.
std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> x, double step);

} // namespace riemdiff
