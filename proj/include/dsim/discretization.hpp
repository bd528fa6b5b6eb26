#pragma once

#include "core.hpp"

#include <Eigen/Eigenvalues>

namespace dsim {

struct Mesh1D {
  int N = 0;
  double L = 0.0, h = 0.0;
  Vec x;

  int elements() const { return N - 1; }
};

inline Mesh1D build_mesh(int N, double L) {
  require(N >= 3, "build_mesh: need N >= 3");
  require(L > 0.0 && std::isfinite(L), "build_mesh: need L > 0");
  Mesh1D m;
  m.N = N;
  m.L = L;
  m.h = L / (N - 1);
  m.x.resize(N);
  for (int i = 0; i < N; ++i) m.x[i] = L * i / (N - 1);
  m.x[N - 1] = L;
  return m;
}

/// Symmetric tridiagonal matrix: diagonal d, off-diagonal e.
struct SymTridiag {
  Vec d, e;

  SymTridiag() = default;
  explicit SymTridiag(int n) : d(Vec::Zero(n)), e(Vec::Zero(std::max(n - 1, 0))) {}
  int size() const { return static_cast<int>(d.size()); }

  Vec apply(const Vec& x) const {
    const int n = size();
    Vec y = d.cwiseProduct(x);
    for (int i = 0; i + 1 < n; ++i) {
      y[i] += e[i] * x[i + 1];
      y[i + 1] += e[i] * x[i];
    }
    return y;
  }
  double quad(const Vec& x) const { return x.dot(apply(x)); }

  // LDL^T sweep; throws if a pivot is not positive.
  Vec solve(const Vec& b) const {
    const int n = size();
    Vec piv(n), y(n);
    piv[0] = d[0];
    y[0] = b[0];
    if (!(piv[0] > 0.0)) throw SolverError("tridiagonal system not positive definite");
    for (int i = 1; i < n; ++i) {
      double l = e[i - 1] / piv[i - 1];
      piv[i] = d[i] - l * e[i - 1];
      if (!(piv[i] > 0.0)) throw SolverError("tridiagonal system not positive definite");
      y[i] = b[i] - l * y[i - 1];
    }
    Vec x(n);
    x[n - 1] = y[n - 1] / piv[n - 1];
    for (int i = n - 2; i >= 0; --i) x[i] = (y[i] - e[i] * x[i + 1]) / piv[i];
    return x;
  }

  Mat to_dense() const {
    const int n = size();
    Mat A = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) A(i, i) = d[i];
    for (int i = 0; i + 1 < n; ++i) A(i, i + 1) = A(i + 1, i) = e[i];
    return A;
  }

  SymTridiag& axpy(double s, const SymTridiag& o) {
    d += s * o.d;
    e += s * o.e;
    return *this;
  }
};

struct Operators {
  bool lumped_mass = false;
  SymTridiag M; // momentum mass (consistent unless lumped_mass)
  SymTridiag S; // stiffness of -d/dx(d/dx)
  Vec m;        // lumped nodal weights, also the nodal quadrature weights
  Vec trace0, traceL;
};

// Element stiffness weighted by per-element coefficients.
inline SymTridiag weighted_stiffness(const Mesh1D& mesh, const Vec& coeff) {
  SymTridiag S(mesh.N);
  for (int e = 0; e < mesh.elements(); ++e) {
    double k = coeff[e] / mesh.h;
    S.d[e] += k;
    S.d[e + 1] += k;
    S.e[e] -= k;
  }
  return S;
}

inline Operators assemble_operators(const Mesh1D& mesh, bool lumped_mass = false) {
  const int N = mesh.N;
  const double h = mesh.h;
  Operators op;
  op.lumped_mass = lumped_mass;
  op.m = Vec::Constant(N, h);
  op.m[0] = op.m[N - 1] = 0.5 * h;
  op.M = SymTridiag(N);
  if (lumped_mass) {
    op.M.d = op.m;
  } else {
    for (int e = 0; e < N - 1; ++e) {
      op.M.d[e] += h / 3.0;
      op.M.d[e + 1] += h / 3.0;
      op.M.e[e] += h / 6.0;
    }
  }
  op.S = weighted_stiffness(mesh, Vec::Ones(N - 1));
  op.trace0 = Vec::Zero(N);
  op.traceL = Vec::Zero(N);
  op.trace0[0] = 1.0;
  op.traceL[N - 1] = 1.0;
  return op;
}

inline Vec element_average(const Vec& nodal) {
  const int n = static_cast<int>(nodal.size()) - 1;
  Vec a(n);
  for (int e = 0; e < n; ++e) a[e] = 0.5 * (nodal[e] + nodal[e + 1]);
  return a;
}

inline Vec strains(const Mesh1D& mesh, const Vec& u) {
  Vec s(mesh.elements());
  for (int e = 0; e < mesh.elements(); ++e) s[e] = (u[e + 1] - u[e]) / mesh.h;
  return s;
}

// q_i = sum over elements at node i of (h/2)(C/2) eps_e^2; sum_i a(chi_i) q_i is the elastic energy.
inline Vec elastic_weights(const Mesh1D& mesh, const Vec& u, double C) {
  Vec q = Vec::Zero(mesh.N);
  for (int e = 0; e < mesh.elements(); ++e) {
    double eps = (u[e + 1] - u[e]) / mesh.h;
    double w = 0.25 * mesh.h * C * eps * eps;
    q[e] += w;
    q[e + 1] += w;
  }
  return q;
}

template <class F>
Vec map_nodal(const Vec& x, const F& f) {
  Vec y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

/// First n+1 eigenpairs of V S y = lambda M y, M-orthonormal.
struct EigenBasis {
  int n = 0;
  double V = 1.0;
  Vec lambda;
  Mat Y; // N x (n+1)
  double residual = 0.0;
  double ortho_error = 0.0;
};

inline EigenBasis neumann_eigenbasis(const Mesh1D& mesh, const Operators& ops, double V, int n,
                                     double tol_eig = 1e-9) {
  require(V > 0.0, "neumann_eigenbasis: V must be positive");
  require(n >= 0 && n < mesh.N - 1, "neumann_eigenbasis: need 0 <= n < N-1");
  Mat A = V * ops.S.to_dense();
  Mat B = ops.M.to_dense();
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(A, B, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (es.info() != Eigen::Success) throw SolverError("eigensolver did not converge");
  EigenBasis eb;
  eb.n = n;
  eb.V = V;
  eb.lambda = es.eigenvalues().head(n + 1);
  eb.Y = es.eigenvectors().leftCols(n + 1);
  // exact constant mode
  eb.lambda[0] = 0.0;
  eb.Y.col(0).setConstant(1.0 / std::sqrt(mesh.L));
  for (int k = 1; k <= n; ++k) {
    Vec y = eb.Y.col(k);
    y -= y.dot(ops.M.apply(eb.Y.col(0))) * eb.Y.col(0);
    y /= std::sqrt(y.dot(ops.M.apply(y)));
    if (y[0] < 0.0) y = -y;
    eb.Y.col(k) = y;
  }
  double scale = A.cwiseAbs().rowwise().sum().maxCoeff();
  for (int k = 0; k <= n; ++k) {
    Vec r = A * eb.Y.col(k) - eb.lambda[k] * (B * eb.Y.col(k));
    eb.residual = std::max(eb.residual, r.norm() / scale);
  }
  Mat G = eb.Y.transpose() * B * eb.Y;
  eb.ortho_error = (G - Mat::Identity(n + 1, n + 1)).cwiseAbs().maxCoeff();
  if (eb.residual > tol_eig || eb.ortho_error > tol_eig)
    throw SolverError("eigenbasis residual above tolerance");
  return eb;
}

} // namespace dsim
