#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dpcqa {

// Evaluation statistics. Everything here is double precision and pure.

double plcc(const std::vector<double>& x, const std::vector<double>& y);

// 1-based ranks, ties get the mean of the ranks they span
std::vector<double> average_ranks(const std::vector<double>& v);

double srcc(const std::vector<double>& x, const std::vector<double>& y);

struct KwResult {
    double h = 0;
    double p = 1;
    int64_t dof = 0;
};
KwResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

// binary masks, nonzero = member, same length required; both empty -> 1.0
double dice(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

double count_error(int64_t pred_count, int64_t ref_count);

// chi-square survival via regularized upper incomplete gamma
double chi2_survival(double x, int64_t dof);

// regularized incomplete gamma / beta, exposed for test oracles
double gamma_p(double a, double x);
double gamma_q(double a, double x);
double incomplete_beta(double a, double b, double x);

// two-sided p for Spearman rho via t = rho*sqrt((n-2)/(1-rho^2)) with a
// Student-t survival function; an approximation, adequate for n >= 10
double spearman_p_approx(double rho, int64_t n);

// exact two-sided permutation p over all n! orderings; n <= 10 only
double spearman_p_exact(const std::vector<double>& x, const std::vector<double>& y);

struct BinReport {
    struct Bin {
        double lo = 0, hi = 0;
        int64_t count = 0;
        double median = 0;  // meaningful only when count > 0
    };
    std::vector<Bin> bins;  // G1..G4 over edges [0, 0.2, 0.4, 0.6, 1.0]
    double rho = 0, rho_p = 1;
    double kw_h = 0, kw_p = 1;
    std::vector<std::string> warnings;
};

// scores in [0,1] paired with a downstream metric; bins by score,
// Spearman over the ungrouped pairs, Kruskal-Wallis across nonempty bins
BinReport bin_group_analysis(const std::vector<double>& scores,
                             const std::vector<double>& metrics);

}  // namespace dpcqa
