#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unisim::sim {

inline constexpr double kNormEpsilon = 1e-12;

enum class TiePolicy { PreferFirst, Error };

const char* to_string(TiePolicy p);
TiePolicy tie_policy_from_string(const std::string& s);

struct DegenerateVector : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TieError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scales v to unit l2 norm. Throws DegenerateVector if the norm is below epsilon.
std::vector<double> normalize(std::span<const double> v);

// <u/|u|, v/|v|>, clamped to [-1, 1] against rounding.
double cosine_sim(std::span<const double> u, std::span<const double> v);
double cosine_sim_f(std::span<const float> u, std::span<const float> v);

// Index of the larger score; ties resolved per policy.
int decide_2afc(double s0, double s1, TiePolicy tie = TiePolicy::PreferFirst);

// Argmax over N >= 2 scores; first maximum wins under PreferFirst.
int decide_nafc(std::span<const double> scores, TiePolicy tie = TiePolicy::PreferFirst);

// Softmax weight of the "good" prompt similarity at temperature tau > 0:
// exp(tau*s_good) / (exp(tau*s_good) + exp(tau*s_bad)), computed stably.
double iqa_prompt_pair_score(double sim_good, double sim_bad, double tau);

// Odd item of a symmetric 3x3 similarity matrix: argmin of off-diagonal row
// sums (the most similar pair stays together). Diagonal is ignored.
int decide_ooo(const double matrix[3][3]);

}  // namespace unisim::sim
