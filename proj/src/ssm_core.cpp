#include "ssmlab/ssm/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ssmlab::ssm {

namespace {

// phi1(z) = (e^z - 1)/z with series branch below |z| < 1e-8.
cplx phi1c(cplx z) {
  if (std::abs(z) < 1e-8) return 1.0 + 0.5 * z + z * z / 6.0;
  return (std::exp(z) - 1.0) / z;
}

}  // namespace

std::string to_string(ParamTag t) { return t == ParamTag::dense ? "dense" : "diagonal"; }
std::string to_string(DiscTag t) {
  switch (t) {
    case DiscTag::bilinear: return "bilinear";
    case DiscTag::zoh: return "zoh";
    case DiscTag::dss_eq7: return "dss_eq7";
  }
  return "?";
}
ParamTag param_tag_from(const std::string& s) {
  if (s == "dense") return ParamTag::dense;
  if (s == "diagonal") return ParamTag::diagonal;
  throw std::invalid_argument("unknown param_tag '" + s + "'");
}
DiscTag disc_tag_from(const std::string& s) {
  if (s == "bilinear") return DiscTag::bilinear;
  if (s == "zoh") return DiscTag::zoh;
  if (s == "dss_eq7") return DiscTag::dss_eq7;
  throw std::invalid_argument("unknown disc_tag '" + s + "'");
}

bool DiscretizedSSM::siso() const {
  if (tag == ParamTag::diagonal) return true;  // stored SISO by construction
  return Bbar.cols == 1 && Cbar.rows == 1;
}

DiscretizedSSM bilinear_discretize(const SSMParams& p) {
  DiscretizedSSM d;
  d.tag = p.tag;
  d.disc = DiscTag::bilinear;
  const double h = p.dt / 2.0;
  if (p.tag == ParamTag::dense) {
    la::Mat f = la::add(la::Mat::identity(p.A.rows), la::scale(p.A, -h));
    la::Lu lu;
    try {
      lu = la::lu_factor(f);
    } catch (const std::runtime_error&) {
      throw std::runtime_error("bilinear_discretize: (I - dt/2 A) singular, cond_1 estimate " +
                               std::to_string(la::cond_1(f)));
    }
    d.Abar = lu.solve(la::add(la::Mat::identity(p.A.rows), la::scale(p.A, h)));
    d.Bbar = lu.solve(la::scale(p.B, p.dt));
    d.Cbar = p.C;
  } else {
    d.abar.reserve(p.lambda.size());
    d.bbar.reserve(p.lambda.size());
    for (std::size_t i = 0; i < p.lambda.size(); ++i) {
      const cplx den = 1.0 - h * p.lambda[i];
      if (std::abs(den) < 1e-300)
        throw std::runtime_error("bilinear_discretize: 1 - dt/2 lambda vanishes on channel " +
                                 std::to_string(i));
      d.abar.push_back((1.0 + h * p.lambda[i]) / den);
      d.bbar.push_back(p.dt * p.b[i] / den);
    }
    d.cbar = p.c;
  }
  return d;
}

DiscretizedSSM zoh_discretize(const SSMParams& p) {
  DiscretizedSSM d;
  d.tag = p.tag;
  d.disc = DiscTag::zoh;
  if (p.tag == ParamTag::dense) {
    d.Abar = la::expm(la::scale(p.A, p.dt));
    la::Lu lu;
    try {
      lu = la::lu_factor(p.A);
    } catch (const std::runtime_error&) {
      throw std::runtime_error(
          "zoh_discretize: dense A is singular; use the diagonal tag for the series limit");
    }
    la::Mat am1 = la::add(d.Abar, la::scale(la::Mat::identity(p.A.rows), -1.0));
    d.Bbar = lu.solve(la::matmul(am1, p.B));
    d.Cbar = p.C;
  } else {
    d.abar.reserve(p.lambda.size());
    d.bbar.reserve(p.lambda.size());
    for (std::size_t i = 0; i < p.lambda.size(); ++i) {
      const cplx w = p.lambda[i] * p.dt;
      d.abar.push_back(std::exp(w));
      // (e^w - 1)/lambda * b = dt * phi1(w) * b; series limit dt*b at w -> 0
      d.bbar.push_back(p.dt * phi1c(w) * p.b[i]);
    }
    d.cbar = p.c;
  }
  return d;
}

DiscretizedSSM dss_instantiate(const std::vector<cplx>& lambda, double dt, std::int64_t L) {
  if (L < 1) throw std::invalid_argument("dss_instantiate: L must be >= 1");
  DiscretizedSSM d;
  d.tag = ParamTag::diagonal;
  d.disc = DiscTag::dss_eq7;
  d.L = L;
  const auto Ld = static_cast<double>(L);
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    const cplx w = lambda[i] * dt;
    d.abar.push_back(std::exp(w));
    if (std::abs(w) < 1e-8) {
      if (std::abs(lambda[i]) < 1e-300)
        throw std::runtime_error("dss_instantiate: lambda*dt = 0 on channel " + std::to_string(i));
      // (e^w-1)/(lambda(e^{Lw}-1)) = (1 + (1-L)w/2 + O(w^2)) / (lambda L)
      d.bbar.push_back((1.0 + 0.5 * (1.0 - Ld) * w) / (lambda[i] * Ld));
    } else {
      const cplx den = lambda[i] * (std::exp(Ld * w) - 1.0);
      if (std::abs(den) < 1e-300)
        throw std::runtime_error("dss_instantiate: exp(L lambda dt) = 1 on channel " +
                                 std::to_string(i));
      d.bbar.push_back((std::exp(w) - 1.0) / den);
    }
    d.cbar.push_back(1.0);
  }
  return d;
}

ConditioningReport conditioning_report(double dt, const la::Mat& A) {
  ConditioningReport r;
  la::Mat m = la::scale(A, dt);
  r.kappa = la::cond_1(m);
  auto eigs = la::eig(m);
  r.min_abs_eig = std::numeric_limits<double>::infinity();
  for (auto z : eigs) r.min_abs_eig = std::min(r.min_abs_eig, std::abs(z));
  r.inv_scale = r.min_abs_eig > 0.0 ? 1.0 / r.min_abs_eig
                                    : std::numeric_limits<double>::infinity();
  // ||Bbar|| for B = ones: finite limit dt*B as dt -> 0 even though the
  // inverse blows up.
  try {
    la::Mat ones(A.rows, 1, 1.0);
    la::Mat abar = la::expm(m);
    la::Mat am1 = la::add(abar, la::scale(la::Mat::identity(A.rows), -1.0));
    la::Mat bbar = la::solve(A, la::matmul(am1, ones));
    r.bbar_norm = la::norm_fro(bbar);
  } catch (const std::runtime_error&) {
    r.bbar_norm = std::numeric_limits<double>::quiet_NaN();
  }
  r.flagged = !(r.kappa <= kConditionFlagThreshold) || !(r.inv_scale <= kConditionFlagThreshold);
  return r;
}

std::vector<double> ssm_kernel(const DiscretizedSSM& d, std::int64_t L) {
  if (!d.siso()) throw std::invalid_argument("ssm_kernel: SISO shapes required");
  std::vector<double> k(static_cast<std::size_t>(L));
  if (d.tag == ParamTag::diagonal) {
    std::vector<cplx> v = d.bbar;  // v_m = abar^m bbar
    for (std::int64_t m = 0; m < L; ++m) {
      cplx acc = 0.0;
      for (std::size_t s = 0; s < v.size(); ++s) acc += d.cbar[s] * v[s];
      k[static_cast<std::size_t>(m)] = acc.real();
      for (std::size_t s = 0; s < v.size(); ++s) v[s] *= d.abar[s];
    }
  } else {
    std::vector<double> v(d.Bbar.rows);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = d.Bbar(i, 0);
    for (std::int64_t m = 0; m < L; ++m) {
      double acc = 0.0;
      for (std::size_t s = 0; s < v.size(); ++s) acc += d.Cbar(0, s) * v[s];
      k[static_cast<std::size_t>(m)] = acc;
      v = la::matvec(d.Abar, v);
    }
  }
  return k;
}

std::vector<double> conv_apply(const std::vector<double>& kernel, const std::vector<double>& u) {
  if (kernel.size() != u.size())
    throw std::invalid_argument("conv_apply: kernel length " + std::to_string(kernel.size()) +
                                " != input length " + std::to_string(u.size()));
  const std::size_t L = u.size();
  std::vector<double> y(L, 0.0);
  for (std::size_t j = 0; j < L; ++j) {
    const double uj = u[j];
    if (uj == 0.0) continue;
    for (std::size_t m = 0; m + j < L; ++m) y[j + m] += kernel[m] * uj;
  }
  return y;
}

ScanResult sequential_scan(const DiscretizedSSM& d, const std::vector<double>& u) {
  const std::size_t L = u.size();
  ScanResult r;
  r.y.resize(L);
  r.states.resize(L);
  if (d.tag == ParamTag::diagonal) {
    const std::size_t h = d.abar.size();
    std::vector<cplx> x(h, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      for (std::size_t s = 0; s < h; ++s) x[s] = d.abar[s] * x[s] + d.bbar[s] * u[k];
      cplx acc = 0.0;
      for (std::size_t s = 0; s < h; ++s) acc += d.cbar[s] * x[s];
      r.y[k] = acc.real();
      r.states[k] = x;
    }
  } else {
    if (d.Bbar.cols != 1 || d.Cbar.rows != 1)
      throw std::invalid_argument("sequential_scan: dense path expects SISO shapes");
    const std::size_t h = d.Abar.rows;
    std::vector<double> x(h, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      x = la::matvec(d.Abar, x);
      for (std::size_t s = 0; s < h; ++s) x[s] += d.Bbar(s, 0) * u[k];
      double acc = 0.0;
      for (std::size_t s = 0; s < h; ++s) acc += d.Cbar(0, s) * x[s];
      r.y[k] = acc;
      r.states[k].assign(x.begin(), x.end());
    }
  }
  return r;
}

std::vector<double> stepwise_lag_kernel(const StepwiseSSM& d) {
  const std::size_t L = d.length();
  const std::size_t h = d.state_dim();
  std::vector<double> g(L, 0.0);
  std::vector<double> prod(h, 1.0);  // prod_{i<m} abar_i
  for (std::size_t m = 0; m < L; ++m) {
    double acc = 0.0;
    for (std::size_t s = 0; s < h; ++s) acc += d.cbar[m][s] * prod[s] * d.bbar[m][s];
    g[m] = acc;
    for (std::size_t s = 0; s < h; ++s) prod[s] *= d.abar[m][s];
  }
  return g;
}

ScanResult sequential_scan(const StepwiseSSM& d, const std::vector<double>& u) {
  if (d.length() != u.size())
    throw std::invalid_argument("sequential_scan: stepwise length mismatch");
  ScanResult r;
  const auto g = stepwise_lag_kernel(d);
  r.y = conv_apply(g, u);
  // Per-lag weight vectors prod_{i<m}(abar_i) . bbar_m stand in for states.
  const std::size_t h = d.state_dim();
  std::vector<double> prod(h, 1.0);
  r.states.resize(d.length());
  for (std::size_t m = 0; m < d.length(); ++m) {
    r.states[m].resize(h);
    for (std::size_t s = 0; s < h; ++s) r.states[m][s] = prod[s] * d.bbar[m][s];
    for (std::size_t s = 0; s < h; ++s) prod[s] *= d.abar[m][s];
  }
  return r;
}

std::pair<cplx, cplx> scan_combine(const std::pair<cplx, cplx>& e1,
                                   const std::pair<cplx, cplx>& e2) {
  return {e2.first * e1.first, e2.first * e1.second + e2.second};
}

void blelloch_inclusive(std::vector<std::pair<cplx, cplx>>& e) {
  const std::size_t n = e.size();
  if (n < 2) return;
  std::size_t pow2 = 1;
  while (pow2 < n) pow2 <<= 1;
  const std::pair<cplx, cplx> id{1.0, 0.0};
  std::vector<std::pair<cplx, cplx>> w(pow2, id);
  std::copy(e.begin(), e.end(), w.begin());
  const auto orig = w;
  // Up-sweep.
  for (std::size_t d = 1; d < pow2; d <<= 1)
    for (std::size_t i = 2 * d - 1; i < pow2; i += 2 * d)
      w[i] = scan_combine(w[i - d], w[i]);
  // Down-sweep (exclusive). The operator is not commutative: the right child
  // receives combine(parent prefix, old left subtree total), in that order.
  w[pow2 - 1] = id;
  for (std::size_t d = pow2 >> 1; d >= 1; d >>= 1) {
    for (std::size_t i = 2 * d - 1; i < pow2; i += 2 * d) {
      const auto t = w[i - d];
      w[i - d] = w[i];
      w[i] = scan_combine(w[i], t);
    }
    if (d == 1) break;
  }
  // Inclusive = exclusive o element.
  for (std::size_t i = 0; i < n; ++i) e[i] = scan_combine(w[i], orig[i]);
}

std::vector<double> parallel_scan(const DiscretizedSSM& d, const std::vector<double>& u) {
  if (d.tag != ParamTag::diagonal)
    throw std::invalid_argument("parallel_scan: diagonal Abar required");
  const std::size_t L = u.size();
  const std::size_t h = d.abar.size();
  std::vector<double> y(L, 0.0);
  std::vector<std::pair<cplx, cplx>> lane(L);
  for (std::size_t s = 0; s < h; ++s) {
    for (std::size_t k = 0; k < L; ++k) lane[k] = {d.abar[s], d.bbar[s] * u[k]};
    blelloch_inclusive(lane);
    for (std::size_t k = 0; k < L; ++k) y[k] += (d.cbar[s] * lane[k].second).real();
  }
  return y;
}

std::vector<double> ema_scan(const EMAParams& p, const std::vector<double>& u, std::size_t L) {
  const std::size_t d = p.channels();
  const std::size_t h = p.state_dim();
  if (u.size() != L * d) throw std::invalid_argument("ema_scan: input must be L x d");
  std::vector<double> y(L * d, 0.0);
  std::vector<double> x(h);
  for (std::size_t c = 0; c < d; ++c) {
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      const double uk = u[k * d + c];
      double acc = 0.0;
      for (std::size_t s = 0; s < h; ++s) {
        const double a = 1.0 - p.alpha(c, s) * p.delta(c, s);
        x[s] = p.alpha(c, s) * (p.beta(c, s) * uk) + a * x[s];
        acc += p.eta(c, s) * x[s];
      }
      y[k * d + c] = acc;
    }
  }
  return y;
}

DiscretizedSSM ema_to_ssm(const EMAParams& p, std::size_t channel) {
  DiscretizedSSM d;
  d.tag = ParamTag::diagonal;
  d.disc = DiscTag::zoh;  // nominal; entries are already discrete
  const std::size_t h = p.state_dim();
  for (std::size_t s = 0; s < h; ++s) {
    d.abar.emplace_back(1.0 - p.alpha(channel, s) * p.delta(channel, s), 0.0);
    d.bbar.emplace_back(p.alpha(channel, s) * p.beta(channel, s), 0.0);
    d.cbar.emplace_back(p.eta(channel, s), 0.0);
  }
  return d;
}

// --- dump/load --------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_mat(const la::Mat& m) {
  std::string s;
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (i) s += " ; ";
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (j) s += ' ';
      s += fmt(m(i, j));
    }
  }
  return s;
}

std::string fmt_cvec(const std::vector<cplx>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += fmt(v[i].real()) + "," + fmt(v[i].imag());
  }
  return s;
}

la::Mat parse_mat(const std::string& text) {
  std::vector<std::vector<double>> rows(1);
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    if (tok == ";") {
      rows.emplace_back();
    } else {
      rows.back().push_back(std::stod(tok));
    }
  }
  if (rows.back().empty()) rows.pop_back();
  if (rows.empty()) return {};
  la::Mat m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols) throw std::invalid_argument("ragged matrix in params text");
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

std::vector<cplx> parse_cvec(const std::string& text) {
  std::vector<cplx> v;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    const auto comma = tok.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("expected re,im pair: " + tok);
    v.emplace_back(std::stod(tok.substr(0, comma)), std::stod(tok.substr(comma + 1)));
  }
  return v;
}

}  // namespace

std::string dump_params(const SSMParams& p) {
  std::string s;
  s += "param_tag = " + to_string(p.tag) + "\n";
  s += "disc_tag = none\n";
  s += "h = " + std::to_string(p.state_dim()) + "\n";
  const std::size_t d = p.tag == ParamTag::dense ? p.B.cols : 1;
  s += "d = " + std::to_string(d) + "\n";
  s += "dt = " + fmt(p.dt) + "\n";
  if (p.tag == ParamTag::dense) {
    s += "A = " + fmt_mat(p.A) + "\n";
    s += "B = " + fmt_mat(p.B) + "\n";
    s += "C = " + fmt_mat(p.C) + "\n";
  } else {
    s += "lambda = " + fmt_cvec(p.lambda) + "\n";
    s += "b = " + fmt_cvec(p.b) + "\n";
    s += "c = " + fmt_cvec(p.c) + "\n";
  }
  return s;
}

SSMParams load_params(const std::string& text) {
  SSMParams p;
  std::istringstream is(text);
  std::string line;
  bool have_tag = false;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "param_tag") {
      p.tag = param_tag_from(val);
      have_tag = true;
    } else if (key == "dt") {
      p.dt = std::stod(val);
    } else if (key == "A") {
      p.A = parse_mat(val);
    } else if (key == "B") {
      p.B = parse_mat(val);
    } else if (key == "C") {
      p.C = parse_mat(val);
    } else if (key == "lambda") {
      p.lambda = parse_cvec(val);
    } else if (key == "b") {
      p.b = parse_cvec(val);
    } else if (key == "c") {
      p.c = parse_cvec(val);
    }
    // h, d, disc_tag are informational on load
  }
  if (!have_tag) throw std::invalid_argument("load_params: missing param_tag");
  return p;
}

}  // namespace ssmlab::ssm
