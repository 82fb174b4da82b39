#pragma once

#include <string>
#include <vector>

namespace criteria {

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

Outcome tunnel_slip();             // 1
Outcome outlier_rejection();       // 2
Outcome constraint_exactness();    // 3
Outcome localizability_patterns(); // 4
Outcome jacobian_fidelity();       // 5
Outcome smoother_consistency();    // 6
Outcome delay_tolerance();         // 7
Outcome throughput();              // 8
Outcome kernel_quiescence();       // 9

}  // namespace criteria
