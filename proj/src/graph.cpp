#include "riemdiff/graph.hpp"

#include <cmath>
#include <cstring>

namespace riemdiff {

namespace {
inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
inline double stable_softplus(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}
} // namespace

void ParamValues::zero() {
    for (auto& s : slots) std::fill(s.begin(), s.end(), 0.0);
}

std::size_t ParamValues::total_size() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.size();
    return n;
}

// ------------------------------------------------------------------- builder

int Graph::check(int id, const char* who) const {
    if (id < 0 || id >= size())
        throw ContractError(std::string(who) + ": node id out of range");
    return id;
}

int Graph::push(Node n) {
    if (n.dim <= 0) throw ContractError("node with nonpositive dimension");
    total_dim_ += std::size_t(n.dim);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

int Graph::input(int dim) { return push({Op::Input, dim, {}}); }

int Graph::param(int dim) {
    Node n{Op::Param, dim, {}};
    n.slot = int(param_dims_.size());
    param_dims_.push_back(dim);
    return push(std::move(n));
}

int Graph::constant(std::vector<double> values) {
    if (values.empty()) throw ContractError("empty constant");
    Node n{Op::Const, int(values.size()), {}};
    n.cdata = std::move(values);
    return push(std::move(n));
}

int Graph::matvec(int W, int x, int rows, int cols) {
    check(W, "matvec"); check(x, "matvec");
    if (node(W).dim != rows * cols) throw ContractError("matvec: weight node has wrong size");
    if (node(x).dim != cols) throw ContractError("matvec: vector node has wrong size");
    Node n{Op::MatVec, rows, {W, x}};
    n.rows = rows; n.cols = cols;
    return push(std::move(n));
}

int Graph::matmul(int A, int B, int nn) {
    check(A, "matmul"); check(B, "matmul");
    if (node(A).dim != nn * nn || node(B).dim != nn * nn)
        throw ContractError("matmul: operands must be n*n");
    Node n{Op::MatMul, nn * nn, {A, B}};
    n.rows = nn;
    return push(std::move(n));
}

int Graph::transpose(int A, int nn) {
    check(A, "transpose");
    if (node(A).dim != nn * nn) throw ContractError("transpose: operand must be n*n");
    Node n{Op::Transpose, nn * nn, {A}};
    n.rows = nn;
    return push(std::move(n));
}

static void require_same(const Graph& g, int a, int b, const char* who) {
    if (g.node(a).dim != g.node(b).dim)
        throw ContractError(std::string(who) + ": operand lengths differ");
}

int Graph::add(int a, int b) { check(a,"add"); check(b,"add"); require_same(*this,a,b,"add"); return push({Op::Add, node(a).dim, {a, b}}); }
int Graph::sub(int a, int b) { check(a,"sub"); check(b,"sub"); require_same(*this,a,b,"sub"); return push({Op::Sub, node(a).dim, {a, b}}); }
int Graph::mul(int a, int b) { check(a,"mul"); check(b,"mul"); require_same(*this,a,b,"mul"); return push({Op::Mul, node(a).dim, {a, b}}); }
int Graph::div(int a, int b) { check(a,"div"); check(b,"div"); require_same(*this,a,b,"div"); return push({Op::Div, node(a).dim, {a, b}}); }

int Graph::scale(int s, int v) {
    check(s, "scale"); check(v, "scale");
    if (node(s).dim != 1) throw ContractError("scale: scale factor must be scalar");
    return push({Op::Scale, node(v).dim, {s, v}});
}

int Graph::scale_const(double c, int v) {
    check(v, "scale_const");
    Node n{Op::ScaleConst, node(v).dim, {v}};
    n.c = c;
    return push(std::move(n));
}

int Graph::add_const(double c, int v) {
    check(v, "add_const");
    Node n{Op::AddConst, node(v).dim, {v}};
    n.c = c;
    return push(std::move(n));
}

int Graph::dot(int a, int b) { check(a,"dot"); check(b,"dot"); require_same(*this,a,b,"dot"); return push({Op::Dot, 1, {a, b}}); }
int Graph::sum(int v) { check(v, "sum"); return push({Op::Sum, 1, {v}}); }
int Graph::square(int v) { check(v, "square"); return push({Op::Square, node(v).dim, {v}}); }
int Graph::sine(int v) { check(v, "sine"); return push({Op::Sine, node(v).dim, {v}}); }
int Graph::cosine(int v) { check(v, "cosine"); return push({Op::Cosine, node(v).dim, {v}}); }
int Graph::sigmoid(int v) { check(v, "sigmoid"); return push({Op::Sigmoid, node(v).dim, {v}}); }
int Graph::softplus(int v) { check(v, "softplus"); return push({Op::Softplus, node(v).dim, {v}}); }
int Graph::exp(int v) { check(v, "exp"); return push({Op::Exp, node(v).dim, {v}}); }
int Graph::log(int v) { check(v, "log"); return push({Op::Log, node(v).dim, {v}}); }

int Graph::concat(const std::vector<int>& parts) {
    if (parts.empty()) throw ContractError("concat of nothing");
    int total = 0;
    for (int p : parts) { check(p, "concat"); total += node(p).dim; }
    Node n{Op::Concat, total, parts};
    return push(std::move(n));
}

int Graph::slice(int v, int offset, int len) {
    check(v, "slice");
    if (offset < 0 || len <= 0 || offset + len > node(v).dim)
        throw ContractError("slice window out of range");
    Node n{Op::Slice, len, {v}};
    n.rows = offset;
    return push(std::move(n));
}

int Graph::swish(int v) { return mul(v, sigmoid(v)); }

ParamValues Graph::make_params_zero() const {
    ParamValues p;
    p.slots.reserve(param_dims_.size());
    for (int d : param_dims_) p.slots.emplace_back(std::size_t(d), 0.0);
    return p;
}

// ----------------------------------------------------------------- workspace

Workspace::Workspace(const Graph& g) : g_(&g) {
    off_.resize(std::size_t(g.size()) + 1, 0);
    for (int i = 0; i < g.size(); ++i) off_[std::size_t(i) + 1] = off_[std::size_t(i)] + g.node(i).dim;
    const std::size_t total = std::size_t(off_.back());
    val_.assign(total, 0.0);
    tan_.assign(total, 0.0);
    adj_.assign(total, 0.0);
    tadj_.assign(total, 0.0);
    // Constants never change; write them once.
    for (int i = 0; i < g.size(); ++i)
        if (g.node(i).op == Op::Const)
            std::memcpy(v(i), g.node(i).cdata.data(), sizeof(double) * g.node(i).cdata.size());
}

void Workspace::set_input(int input_node, std::span<const double> values) {
    const Node& n = g_->node(input_node);
    if (n.op != Op::Input) throw ContractError("set_input on a non-input node");
    if (int(values.size()) != n.dim) throw ContractError("set_input size mismatch");
    std::memcpy(v(input_node), values.data(), sizeof(double) * values.size());
}

void Workspace::set_input_scalar(int input_node, double value) {
    set_input(input_node, std::span<const double>(&value, 1));
}

std::span<const double> Workspace::value(int node) const {
    return {val_.data() + off_[std::size_t(node)], std::size_t(g_->node(node).dim)};
}
std::span<const double> Workspace::tangent(int node) const {
    return {tan_.data() + off_[std::size_t(node)], std::size_t(g_->node(node).dim)};
}
std::span<const double> Workspace::adjoint(int node) const {
    return {adj_.data() + off_[std::size_t(node)], std::size_t(g_->node(node).dim)};
}

void Workspace::forward(const ParamValues& params) {
    tangent_live_ = false;
    if (int(params.slots.size()) != g_->num_param_slots())
        throw ContractError("forward: parameter slot count mismatch");
    const int N = g_->size();
    for (int id = 0; id < N; ++id) {
        const Node& n = g_->node(id);
        double* y = v(id);
        switch (n.op) {
        case Op::Input:
        case Op::Const:
            break; // already in place
        case Op::Param: {
            const auto& s = params.slots[std::size_t(n.slot)];
            if (int(s.size()) != n.dim) throw ContractError("forward: parameter slot size mismatch");
            std::memcpy(y, s.data(), sizeof(double) * s.size());
            break;
        }
        case Op::MatVec: {
            const double* W = v(n.in[0]);
            const double* x = v(n.in[1]);
            for (int r = 0; r < n.rows; ++r) {
                double acc = 0.0;
                const double* wr = W + std::size_t(r) * n.cols;
                for (int c = 0; c < n.cols; ++c) acc += wr[c] * x[c];
                y[r] = acc;
            }
            break;
        }
        case Op::MatMul: {
            const int m = n.rows;
            const double* A = v(n.in[0]);
            const double* B = v(n.in[1]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < m; ++k) acc += A[i * m + k] * B[k * m + j];
                    y[i * m + j] = acc;
                }
            break;
        }
        case Op::Transpose: {
            const int m = n.rows;
            const double* A = v(n.in[0]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) y[j * m + i] = A[i * m + j];
            break;
        }
        case Op::Add: {
            const double* a = v(n.in[0]); const double* b = v(n.in[1]);
            for (int i = 0; i < n.dim; ++i) y[i] = a[i] + b[i];
            break;
        }
        case Op::Sub: {
            const double* a = v(n.in[0]); const double* b = v(n.in[1]);
            for (int i = 0; i < n.dim; ++i) y[i] = a[i] - b[i];
            break;
        }
        case Op::Mul: {
            const double* a = v(n.in[0]); const double* b = v(n.in[1]);
            for (int i = 0; i < n.dim; ++i) y[i] = a[i] * b[i];
            break;
        }
        case Op::Div: {
            const double* a = v(n.in[0]); const double* b = v(n.in[1]);
            for (int i = 0; i < n.dim; ++i) y[i] = a[i] / b[i];
            break;
        }
        case Op::Scale: {
            const double s = *v(n.in[0]); const double* x = v(n.in[1]);
            for (int i = 0; i < n.dim; ++i) y[i] = s * x[i];
            break;
        }
        case Op::ScaleConst: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = n.c * x[i];
            break;
        }
        case Op::AddConst: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = x[i] + n.c;
            break;
        }
        case Op::Dot: {
            const double* a = v(n.in[0]); const double* b = v(n.in[1]);
            double acc = 0.0;
            const int d = g_->node(n.in[0]).dim;
            for (int i = 0; i < d; ++i) acc += a[i] * b[i];
            y[0] = acc;
            break;
        }
        case Op::Sum: {
            const double* x = v(n.in[0]);
            double acc = 0.0;
            const int d = g_->node(n.in[0]).dim;
            for (int i = 0; i < d; ++i) acc += x[i];
            y[0] = acc;
            break;
        }
        case Op::Square: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = x[i] * x[i];
            break;
        }
        case Op::Sine: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = std::sin(x[i]);
            break;
        }
        case Op::Cosine: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = std::cos(x[i]);
            break;
        }
        case Op::Sigmoid: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = stable_sigmoid(x[i]);
            break;
        }
        case Op::Softplus: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = stable_softplus(x[i]);
            break;
        }
        case Op::Exp: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = std::exp(x[i]);
            break;
        }
        case Op::Log: {
            const double* x = v(n.in[0]);
            for (int i = 0; i < n.dim; ++i) y[i] = std::log(x[i]);
            break;
        }
        case Op::Concat: {
            int at = 0;
            for (int src : n.in) {
                const int d = g_->node(src).dim;
                std::memcpy(y + at, v(src), sizeof(double) * std::size_t(d));
                at += d;
            }
            break;
        }
        case Op::Slice:
            std::memcpy(y, v(n.in[0]) + n.rows, sizeof(double) * std::size_t(n.dim));
            break;
        }
    }
}

void Workspace::forward_tangent(int input_node, std::span<const double> seed) {
    const Node& leaf = g_->node(input_node);
    if (leaf.op != Op::Input) throw ContractError("forward_tangent: seed node must be an input");
    if (int(seed.size()) != leaf.dim) throw ContractError("forward_tangent: seed size mismatch");

    std::fill(tan_.begin(), tan_.end(), 0.0);
    std::memcpy(t(input_node), seed.data(), sizeof(double) * seed.size());
    tangent_live_ = true;

    const int N = g_->size();
    for (int id = 0; id < N; ++id) {
        const Node& n = g_->node(id);
        double* ty = t(id);
        switch (n.op) {
        case Op::Input:
        case Op::Param:
        case Op::Const:
            break; // leaves other than the seed keep zero tangent
        case Op::MatVec: {
            // dy = dW x + W dx; dW is nonzero only when W is a computed node.
            const double* W = v(n.in[0]); const double* tW = t(n.in[0]);
            const double* x = v(n.in[1]); const double* tx = t(n.in[1]);
            for (int r = 0; r < n.rows; ++r) {
                double acc = 0.0;
                const double* wr = W + std::size_t(r) * n.cols;
                const double* twr = tW + std::size_t(r) * n.cols;
                for (int c = 0; c < n.cols; ++c) acc += wr[c] * tx[c] + twr[c] * x[c];
                ty[r] = acc;
            }
            break;
        }
        case Op::MatMul: {
            const int m = n.rows;
            const double* A = v(n.in[0]); const double* tA = t(n.in[0]);
            const double* B = v(n.in[1]); const double* tB = t(n.in[1]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < m; ++k)
                        acc += tA[i * m + k] * B[k * m + j] + A[i * m + k] * tB[k * m + j];
                    ty[i * m + j] = acc;
                }
            break;
        }
        case Op::Transpose: {
            const int m = n.rows;
            const double* tA = t(n.in[0]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) ty[j * m + i] = tA[i * m + j];
            break;
        }
        case Op::Add: {
            const double* a = t(n.in[0]); const double* b = t(n.in[1]);
            for (int i = 0; i < n.dim; ++i) ty[i] = a[i] + b[i];
            break;
        }
        case Op::Sub: {
            const double* a = t(n.in[0]); const double* b = t(n.in[1]);
            for (int i = 0; i < n.dim; ++i) ty[i] = a[i] - b[i];
            break;
        }
        case Op::Mul: {
            const double* a = v(n.in[0]); const double* ta = t(n.in[0]);
            const double* b = v(n.in[1]); const double* tb = t(n.in[1]);
            for (int i = 0; i < n.dim; ++i) ty[i] = ta[i] * b[i] + a[i] * tb[i];
            break;
        }
        case Op::Div: {
            const double* a = t(n.in[0]);
            const double* b = v(n.in[1]); const double* tb = t(n.in[1]);
            const double* y = v(id);
            for (int i = 0; i < n.dim; ++i) ty[i] = (a[i] - y[i] * tb[i]) / b[i];
            break;
        }
        case Op::Scale: {
            const double s = *v(n.in[0]); const double ts = *t(n.in[0]);
            const double* x = v(n.in[1]); const double* tx = t(n.in[1]);
            for (int i = 0; i < n.dim; ++i) ty[i] = ts * x[i] + s * tx[i];
            break;
        }
        case Op::ScaleConst: {
            const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = n.c * tx[i];
            break;
        }
        case Op::AddConst: {
            const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = tx[i];
            break;
        }
        case Op::Dot: {
            const double* a = v(n.in[0]); const double* ta = t(n.in[0]);
            const double* b = v(n.in[1]); const double* tb = t(n.in[1]);
            double acc = 0.0;
            const int d = g_->node(n.in[0]).dim;
            for (int i = 0; i < d; ++i) acc += ta[i] * b[i] + a[i] * tb[i];
            ty[0] = acc;
            break;
        }
        case Op::Sum: {
            const double* tx = t(n.in[0]);
            double acc = 0.0;
            const int d = g_->node(n.in[0]).dim;
            for (int i = 0; i < d; ++i) acc += tx[i];
            ty[0] = acc;
            break;
        }
        case Op::Square: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = 2.0 * x[i] * tx[i];
            break;
        }
        case Op::Sine: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = std::cos(x[i]) * tx[i];
            break;
        }
        case Op::Cosine: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = -std::sin(x[i]) * tx[i];
            break;
        }
        case Op::Sigmoid: {
            const double* y = v(id); const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = y[i] * (1.0 - y[i]) * tx[i];
            break;
        }
        case Op::Softplus: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = stable_sigmoid(x[i]) * tx[i];
            break;
        }
        case Op::Exp: {
            const double* y = v(id); const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = y[i] * tx[i];
            break;
        }
        case Op::Log: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            for (int i = 0; i < n.dim; ++i) ty[i] = tx[i] / x[i];
            break;
        }
        case Op::Concat: {
            int at = 0;
            for (int src : n.in) {
                const int d = g_->node(src).dim;
                std::memcpy(ty + at, t(src), sizeof(double) * std::size_t(d));
                at += d;
            }
            break;
        }
        case Op::Slice:
            std::memcpy(ty, t(n.in[0]) + n.rows, sizeof(double) * std::size_t(n.dim));
            break;
        }
    }
}

void Workspace::clear_adjoints() {
    std::fill(adj_.begin(), adj_.end(), 0.0);
    std::fill(tadj_.begin(), tadj_.end(), 0.0);
}

void Workspace::seed_adjoint(int node, std::span<const double> values) {
    if (int(values.size()) != g_->node(node).dim) throw ContractError("seed_adjoint size mismatch");
    double* dst = a(node);
    for (std::size_t i = 0; i < values.size(); ++i) dst[i] += values[i];
}
void Workspace::seed_adjoint_scalar(int node, double value) {
    seed_adjoint(node, std::span<const double>(&value, 1));
}
void Workspace::seed_tangent_adjoint(int node, std::span<const double> values) {
    if (int(values.size()) != g_->node(node).dim) throw ContractError("seed_tangent_adjoint size mismatch");
    double* dst = ta(node);
    for (std::size_t i = 0; i < values.size(); ++i) dst[i] += values[i];
}
void Workspace::seed_tangent_adjoint_scalar(int node, double value) {
    seed_tangent_adjoint(node, std::span<const double>(&value, 1));
}

void Workspace::backward(ParamValues* grad) {
    // Notation inside each case: g = adjoint of the output, tg = adjoint of
    // the output's tangent. For y = f(x) with tangent dy = J(x) dx the rules
    // are  adj(x)  += J^T g + (d/dx[J dx])^T tg   and  tadj(x) += J^T tg.
    // When no tangent pass is live the tg terms vanish (tadj_ is all zero).
    const bool ht = tangent_live_;
    for (int id = g_->size(); id-- > 0;) {
        const Node& n = g_->node(id);
        const double* gy = a(id);
        const double* tgy = ta(id);
        switch (n.op) {
        case Op::Input:
        case Op::Const:
            break;
        case Op::Param:
            if (grad) {
                auto& gs = grad->slots[std::size_t(n.slot)];
                if (int(gs.size()) != n.dim) throw ContractError("backward: gradient slot size mismatch");
                for (int i = 0; i < n.dim; ++i) gs[std::size_t(i)] += gy[i];
            }
            break;
        case Op::MatVec: {
            const double* W = v(n.in[0]); const double* tW = t(n.in[0]);
            const double* x = v(n.in[1]); const double* tx = t(n.in[1]);
            double* aW = a(n.in[0]); double* taW = ta(n.in[0]);
            double* ax = a(n.in[1]); double* tax = ta(n.in[1]);
            for (int r = 0; r < n.rows; ++r) {
                const double gr = gy[r], tgr = tgy[r];
                const std::size_t base = std::size_t(r) * n.cols;
                for (int c = 0; c < n.cols; ++c) {
                    aW[base + c] += gr * x[c];
                    ax[c] += W[base + c] * gr;
                    if (ht) {
                        aW[base + c] += tgr * tx[c];
                        ax[c] += tW[base + c] * tgr;
                        taW[base + c] += tgr * x[c];
                        tax[c] += W[base + c] * tgr;
                    }
                }
            }
            break;
        }
        case Op::MatMul: {
            const int m = n.rows;
            const double* A = v(n.in[0]); const double* tA = t(n.in[0]);
            const double* B = v(n.in[1]); const double* tB = t(n.in[1]);
            double* aA = a(n.in[0]); double* taA = ta(n.in[0]);
            double* aB = a(n.in[1]); double* taB = ta(n.in[1]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    const double gij = gy[i * m + j], tgij = tgy[i * m + j];
                    for (int k = 0; k < m; ++k) {
                        aA[i * m + k] += gij * B[k * m + j];
                        aB[k * m + j] += A[i * m + k] * gij;
                        if (ht) {
                            aA[i * m + k] += tgij * tB[k * m + j];
                            aB[k * m + j] += tA[i * m + k] * tgij;
                            taA[i * m + k] += tgij * B[k * m + j];
                            taB[k * m + j] += A[i * m + k] * tgij;
                        }
                    }
                }
            break;
        }
        case Op::Transpose: {
            const int m = n.rows;
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    ax[i * m + j] += gy[j * m + i];
                    if (ht) tax[i * m + j] += tgy[j * m + i];
                }
            break;
        }
        case Op::Add: {
            double* au = a(n.in[0]); double* av = a(n.in[1]);
            double* tau = ta(n.in[0]); double* tav = ta(n.in[1]);
            for (int i = 0; i < n.dim; ++i) {
                au[i] += gy[i]; av[i] += gy[i];
                if (ht) { tau[i] += tgy[i]; tav[i] += tgy[i]; }
            }
            break;
        }
        case Op::Sub: {
            double* au = a(n.in[0]); double* av = a(n.in[1]);
            double* tau = ta(n.in[0]); double* tav = ta(n.in[1]);
            for (int i = 0; i < n.dim; ++i) {
                au[i] += gy[i]; av[i] -= gy[i];
                if (ht) { tau[i] += tgy[i]; tav[i] -= tgy[i]; }
            }
            break;
        }
        case Op::Mul: {
            const double* u = v(n.in[0]); const double* tu = t(n.in[0]);
            const double* w = v(n.in[1]); const double* tw = t(n.in[1]);
            double* au = a(n.in[0]); double* aw = a(n.in[1]);
            double* tau = ta(n.in[0]); double* taw = ta(n.in[1]);
            for (int i = 0; i < n.dim; ++i) {
                au[i] += gy[i] * w[i];
                aw[i] += gy[i] * u[i];
                if (ht) {
                    au[i] += tgy[i] * tw[i];
                    aw[i] += tgy[i] * tu[i];
                    tau[i] += tgy[i] * w[i];
                    taw[i] += tgy[i] * u[i];
                }
            }
            break;
        }
        case Op::Div: {
            // y = u/w, dy = du/w - y dw/w
            const double* u = v(n.in[0]); const double* tu = t(n.in[0]);
            const double* w = v(n.in[1]); const double* tw = t(n.in[1]);
            const double* y = v(id);
            double* au = a(n.in[0]); double* aw = a(n.in[1]);
            double* tau = ta(n.in[0]); double* taw = ta(n.in[1]);
            for (int i = 0; i < n.dim; ++i) {
                const double iw = 1.0 / w[i];
                au[i] += gy[i] * iw;
                aw[i] -= gy[i] * y[i] * iw;
                if (ht) {
                    au[i] -= tgy[i] * tw[i] * iw * iw;
                    aw[i] += tgy[i] * (2.0 * y[i] * tw[i] - tu[i]) * iw * iw;
                    tau[i] += tgy[i] * iw;
                    taw[i] -= tgy[i] * y[i] * iw;
                }
            }
            break;
        }
        case Op::Scale: {
            const double s = *v(n.in[0]); const double tscale = *t(n.in[0]);
            const double* x = v(n.in[1]); const double* tx = t(n.in[1]);
            double* as = a(n.in[0]); double* ax = a(n.in[1]);
            double* tas = ta(n.in[0]); double* tax = ta(n.in[1]);
            double acc_s = 0.0, acc_ts = 0.0;
            for (int i = 0; i < n.dim; ++i) {
                acc_s += gy[i] * x[i];
                ax[i] += s * gy[i];
                if (ht) {
                    acc_s += tgy[i] * tx[i];
                    ax[i] += tscale * tgy[i];
                    acc_ts += tgy[i] * x[i];
                    tax[i] += s * tgy[i];
                }
            }
            as[0] += acc_s;
            if (ht) tas[0] += acc_ts;
            break;
        }
        case Op::ScaleConst: {
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                ax[i] += n.c * gy[i];
                if (ht) tax[i] += n.c * tgy[i];
            }
            break;
        }
        case Op::AddConst: {
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                ax[i] += gy[i];
                if (ht) tax[i] += tgy[i];
            }
            break;
        }
        case Op::Dot: {
            const double* u = v(n.in[0]); const double* tu = t(n.in[0]);
            const double* w = v(n.in[1]); const double* tw = t(n.in[1]);
            double* au = a(n.in[0]); double* aw = a(n.in[1]);
            double* tau = ta(n.in[0]); double* taw = ta(n.in[1]);
            const double gs = gy[0], tgs = tgy[0];
            const int d = g_->node(n.in[0]).dim;
            for (int i = 0; i < d; ++i) {
                au[i] += gs * w[i];
                aw[i] += gs * u[i];
                if (ht) {
                    au[i] += tgs * tw[i];
                    aw[i] += tgs * tu[i];
                    tau[i] += tgs * w[i];
                    taw[i] += tgs * u[i];
                }
            }
            break;
        }
        case Op::Sum: {
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            const double gs = gy[0], tgs = tgy[0];
            const int d = g_->node(n.in[0]).dim;
            for (int i = 0; i < d; ++i) {
                ax[i] += gs;
                if (ht) tax[i] += tgs;
            }
            break;
        }
        case Op::Square: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                ax[i] += 2.0 * x[i] * gy[i];
                if (ht) {
                    ax[i] += 2.0 * tx[i] * tgy[i];
                    tax[i] += 2.0 * x[i] * tgy[i];
                }
            }
            break;
        }
        case Op::Sine: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                const double cs = std::cos(x[i]);
                ax[i] += cs * gy[i];
                if (ht) {
                    ax[i] -= std::sin(x[i]) * tx[i] * tgy[i];
                    tax[i] += cs * tgy[i];
                }
            }
            break;
        }
        case Op::Cosine: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                const double sn = std::sin(x[i]);
                ax[i] -= sn * gy[i];
                if (ht) {
                    ax[i] -= std::cos(x[i]) * tx[i] * tgy[i];
                    tax[i] -= sn * tgy[i];
                }
            }
            break;
        }
        case Op::Sigmoid: {
            const double* y = v(id); const double* tx = t(n.in[0]);
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                const double d1 = y[i] * (1.0 - y[i]);
                ax[i] += d1 * gy[i];
                if (ht) {
                    ax[i] += d1 * (1.0 - 2.0 * y[i]) * tx[i] * tgy[i];
                    tax[i] += d1 * tgy[i];
                }
            }
            break;
        }
        case Op::Softplus: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                const double sg = stable_sigmoid(x[i]);
                ax[i] += sg * gy[i];
                if (ht) {
                    ax[i] += sg * (1.0 - sg) * tx[i] * tgy[i];
                    tax[i] += sg * tgy[i];
                }
            }
            break;
        }
        case Op::Exp: {
            const double* y = v(id); const double* tx = t(n.in[0]);
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                ax[i] += y[i] * gy[i];
                if (ht) {
                    ax[i] += y[i] * tx[i] * tgy[i];
                    tax[i] += y[i] * tgy[i];
                }
            }
            break;
        }
        case Op::Log: {
            const double* x = v(n.in[0]); const double* tx = t(n.in[0]);
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                const double ix = 1.0 / x[i];
                ax[i] += gy[i] * ix;
                if (ht) {
                    ax[i] -= tx[i] * tgy[i] * ix * ix;
                    tax[i] += tgy[i] * ix;
                }
            }
            break;
        }
        case Op::Concat: {
            int at = 0;
            for (int src : n.in) {
                const int d = g_->node(src).dim;
                double* ax = a(src); double* tax = ta(src);
                for (int i = 0; i < d; ++i) {
                    ax[i] += gy[at + i];
                    if (ht) tax[i] += tgy[at + i];
                }
                at += d;
            }
            break;
        }
        case Op::Slice: {
            double* ax = a(n.in[0]); double* tax = ta(n.in[0]);
            for (int i = 0; i < n.dim; ++i) {
                ax[n.rows + i] += gy[i];
                if (ht) tax[n.rows + i] += tgy[i];
            }
            break;
        }
        }
    }
}

// ------------------------------------------------------------------ wrappers

std::vector<double> jvp(const Graph& g, Workspace& ws, int input_node, int output_node,
                        std::span<const double> v) {
    ws.forward_tangent(input_node, v);
    auto t = ws.tangent(output_node);
    return std::vector<double>(t.begin(), t.end());
}

std::vector<double> vjp(const Graph& g, Workspace& ws, int input_node, int output_node,
                        std::span<const double> u) {
    ws.clear_adjoints();
    ws.seed_adjoint(output_node, u);
    ws.backward(nullptr);
    auto a = ws.adjoint(input_node);
    return std::vector<double>(a.begin(), a.end());
}

std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> x, double step) {
    std::vector<double> xp(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = xp[i];
        xp[i] = keep + step;
        const double fp = f(xp);
        xp[i] = keep - step;
        const double fm = f(xp);
        xp[i] = keep;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

} // namespace riemdiff
