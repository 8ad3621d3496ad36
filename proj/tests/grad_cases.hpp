#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dce/random.hpp"

// One randomized float64 gradient check per call; returns the relative error.
struct GradCase {
  std::string name;
  std::function<double(dce::Rng&)> run;
};

std::vector<GradCase> gradient_cases();
