#include "unisim/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace unisim::sim {

const char* to_string(TiePolicy p) {
    return p == TiePolicy::PreferFirst ? "prefer_first" : "error";
}

TiePolicy tie_policy_from_string(const std::string& s) {
    if (s == "prefer_first") return TiePolicy::PreferFirst;
    if (s == "error") return TiePolicy::Error;
    throw std::invalid_argument("unknown tie policy: " + s);
}

namespace {

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

}  // namespace

std::vector<double> normalize(std::span<const double> v) {
    const double norm = l2_norm(v);
    if (!(norm > kNormEpsilon)) {
        throw DegenerateVector("vector norm below epsilon");
    }
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x /= norm;
    return out;
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw std::invalid_argument("dimension mismatch in cosine_sim");
    }
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (!(nu > kNormEpsilon) || !(nv > kNormEpsilon)) {
        throw DegenerateVector("vector norm below epsilon");
    }
    double dot = 0.0;
    for (size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

double cosine_sim_f(std::span<const float> u, std::span<const float> v) {
    std::vector<double> ud(u.begin(), u.end());
    std::vector<double> vd(v.begin(), v.end());
    return cosine_sim(ud, vd);
}

int decide_2afc(double s0, double s1, TiePolicy tie) {
    const double scores[2] = {s0, s1};
    return decide_nafc(scores, tie);
}

int decide_nafc(std::span<const double> scores, TiePolicy tie) {
    if (scores.size() < 2) {
        throw std::invalid_argument("decide_nafc needs at least 2 scores");
    }
    int best = 0;
    bool tied = false;
    for (size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) {
            best = static_cast<int>(i);
            tied = false;
        } else if (scores[i] == scores[best]) {
            tied = true;
        }
    }
    if (tied && tie == TiePolicy::Error) {
        throw TieError("tied scores under TiePolicy::Error");
    }
    return best;
}

double iqa_prompt_pair_score(double sim_good, double sim_bad, double tau) {
    if (!(tau > 0.0)) {
        throw std::invalid_argument("tau must be positive");
    }
    // Shifted softmax: subtract the max logit before exponentiating.
    const double lg = tau * sim_good;
    const double lb = tau * sim_bad;
    const double m = std::max(lg, lb);
    const double eg = std::exp(lg - m);
    const double eb = std::exp(lb - m);
    return eg / (eg + eb);
}

int decide_ooo(const double matrix[3][3]) {
    for (int i = 0; i < 3; ++i) {
        for (int j = i + 1; j < 3; ++j) {
            if (std::abs(matrix[i][j] - matrix[j][i]) > 1e-9) {
                throw std::invalid_argument("similarity matrix must be symmetric");
            }
        }
    }
    double row_sum[3];
    for (int i = 0; i < 3; ++i) {
        row_sum[i] = 0.0;
        for (int j = 0; j < 3; ++j) {
            if (j != i) row_sum[i] += matrix[i][j];
        }
    }
    int odd = 0;
    for (int i = 1; i < 3; ++i) {
        if (row_sum[i] < row_sum[odd]) odd = i;
    }
    return odd;
}

}  // namespace unisim::sim
