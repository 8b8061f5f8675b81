#include "dpcqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpcqa/tensor.hpp"

namespace dpcqa {

namespace {

void check_paired(const std::vector<double>& x, const std::vector<double>& y, size_t min_n,
                  const char* who) {
    if (x.size() != y.size()) throw ShapeError(std::string(who) + ": series lengths differ");
    if (x.size() < min_n)
        throw ShapeError(std::string(who) + ": need at least " + std::to_string(min_n) + " pairs");
    for (double v : x)
        if (!std::isfinite(v)) throw NumericalError(std::string(who) + ": non-finite value");
    for (double v : y)
        if (!std::isfinite(v)) throw NumericalError(std::string(who) + ": non-finite value");
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Regularized lower incomplete gamma by series expansion; valid x < a+1.
double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma by Lentz continued fraction; x >= a+1.
double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return h;
}

}  // namespace

double gamma_p(double a, double x) {
    if (a <= 0 || x < 0) throw ShapeError("gamma_p: domain error");
    if (x == 0) return 0;
    if (x < a + 1.0) return gamma_p_series(a, x);
    return 1.0 - gamma_q_cf(a, x);
}

double gamma_q(double a, double x) {
    if (a <= 0 || x < 0) throw ShapeError("gamma_q: domain error");
    if (x == 0) return 1;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_cf(a, x);
}

double incomplete_beta(double a, double b, double x) {
    if (a <= 0 || b <= 0 || x < 0 || x > 1) throw ShapeError("incomplete_beta: domain error");
    if (x == 0) return 0;
    if (x == 1) return 1;
    double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                   b * std::log1p(-x);
    double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double chi2_survival(double x, int64_t dof) {
    if (dof < 1) throw ShapeError("chi2_survival: dof must be >= 1");
    if (x <= 0) return 1.0;
    return gamma_q(0.5 * static_cast<double>(dof), 0.5 * x);
}

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
    check_paired(x, y, 3, "plcc");
    size_t n = x.size();
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0)
        throw NumericalError("plcc: correlation undefined for a zero-variance series");
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double srcc(const std::vector<double>& x, const std::vector<double>& y) {
    check_paired(x, y, 3, "srcc");
    return plcc(average_ranks(x), average_ranks(y));
}

KwResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw ShapeError("kruskal_wallis: need at least 2 groups");
    std::vector<double> pooled;
    for (const auto& g : groups) {
        if (g.empty()) throw ShapeError("kruskal_wallis: empty group");
        pooled.insert(pooled.end(), g.begin(), g.end());
    }
    size_t n = pooled.size();
    if (n < 5) throw ShapeError("kruskal_wallis: need total n >= 5");

    KwResult res;
    res.dof = static_cast<int64_t>(groups.size()) - 1;
    std::vector<double> ranks = average_ranks(pooled);

    double nn = static_cast<double>(n);
    double rbar = (nn + 1.0) / 2.0;
    double h = 0;
    size_t pos = 0;
    for (const auto& g : groups) {
        double rsum = 0;
        for (size_t i = 0; i < g.size(); ++i) rsum += ranks[pos + i];
        double ri = rsum / static_cast<double>(g.size());
        h += static_cast<double>(g.size()) * (ri - rbar) * (ri - rbar);
        pos += g.size();
    }
    h *= 12.0 / (nn * (nn + 1.0));

    // tie correction: divide by 1 - sum(t^3 - t)/(n^3 - n)
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double tie_sum = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
        double t = static_cast<double>(j - i + 1);
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    double denom = 1.0 - tie_sum / (nn * nn * nn - nn);
    if (denom <= 0) {
        // every value identical: no evidence of group differences
        res.h = 0;
        res.p = 1;
        return res;
    }
    res.h = h / denom;
    res.p = chi2_survival(res.h, res.dof);
    return res;
}

double dice(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) throw ShapeError("dice: mask sizes differ");
    int64_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool ia = a[i] != 0, ib = b[i] != 0;
        na += ia;
        nb += ib;
        inter += (ia && ib);
    }
    if (na + nb == 0) return 1.0;  // both empty, by convention
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double count_error(int64_t pred_count, int64_t ref_count) {
    if (ref_count < 0) throw ShapeError("count_error: reference count must be >= 0");
    return static_cast<double>(std::abs(pred_count - ref_count)) /
           static_cast<double>(std::max<int64_t>(ref_count, 1));
}

double spearman_p_approx(double rho, int64_t n) {
    if (n < 3) throw ShapeError("spearman_p_approx: need n >= 3");
    double dfree = static_cast<double>(n - 2);
    double r2 = rho * rho;
    if (r2 >= 1.0) return 0.0;
    double t2 = r2 * dfree / (1.0 - r2);
    return incomplete_beta(0.5 * dfree, 0.5, dfree / (dfree + t2));
}

double spearman_p_exact(const std::vector<double>& x, const std::vector<double>& y) {
    check_paired(x, y, 3, "spearman_p_exact");
    size_t n = x.size();
    if (n > 10) throw ShapeError("spearman_p_exact: n must be <= 10");
    double observed = std::abs(srcc(x, y));
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), size_t{0});
    std::vector<double> yp(n);
    int64_t total = 0, extreme = 0;
    do {
        for (size_t i = 0; i < n; ++i) yp[i] = y[perm[i]];
        double r = srcc(x, yp);
        ++total;
        if (std::abs(r) >= observed - 1e-12) ++extreme;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(extreme) / static_cast<double>(total);
}

BinReport bin_group_analysis(const std::vector<double>& scores,
                             const std::vector<double>& metrics) {
    check_paired(scores, metrics, 8, "bin_group_analysis");
    static const double edges[5] = {0.0, 0.2, 0.4, 0.6, 1.0};
    for (double s : scores)
        if (s < 0.0 || s > 1.0)
            throw ShapeError("bin_group_analysis: scores must lie in [0,1]");

    BinReport rep;
    std::vector<std::vector<double>> per_bin(4);
    for (size_t i = 0; i < scores.size(); ++i) {
        int b = 3;  // last bin is closed on the right
        for (int k = 0; k < 3; ++k)
            if (scores[i] >= edges[k] && scores[i] < edges[k + 1]) {
                b = k;
                break;
            }
        per_bin[static_cast<size_t>(b)].push_back(metrics[i]);
    }
    int nonempty = 0;
    for (int k = 0; k < 4; ++k) {
        BinReport::Bin bin;
        bin.lo = edges[k];
        bin.hi = edges[k + 1];
        bin.count = static_cast<int64_t>(per_bin[static_cast<size_t>(k)].size());
        if (bin.count > 0) {
            bin.median = median_of(per_bin[static_cast<size_t>(k)]);
            ++nonempty;
        } else {
            rep.warnings.push_back("bin G" + std::to_string(k + 1) +
                                   " is empty and was excluded from the group test");
        }
        rep.bins.push_back(bin);
    }
    if (nonempty < 2) throw ShapeError("bin_group_analysis: need at least 2 nonempty bins");

    rep.rho = srcc(scores, metrics);
    rep.rho_p = spearman_p_approx(rep.rho, static_cast<int64_t>(scores.size()));

    std::vector<std::vector<double>> kw_groups;
    for (auto& g : per_bin)
        if (!g.empty()) kw_groups.push_back(std::move(g));
    KwResult kw = kruskal_wallis(kw_groups);
    rep.kw_h = kw.h;
    rep.kw_p = kw.p;
    return rep;
}

}  // namespace dpcqa
