#pragma once

// Default tau pool for simulation: 40 standardised values with a roughly
// normal shape and a mildly heavier right tail. This is an approximation of
// an item-pool histogram, not measured data; pass --pool to use real values.

#include <array>

namespace tdcdm {

inline constexpr std::array<double, 40> kReferenceTauPool = {
    -2.0616261936357558,
    -1.672684414749372,
    -1.461071226299129,
    -1.3064187997605454,
    -1.1807718145598955,
    -1.0728133031854885,
    -0.9767577873477622,
    -0.88921759132222111,
    -0.80802051960294408,
    -0.73167840034337994,
    -0.65911784384692018,
    -0.58953129528786818,
    -0.52228880867286331,
    -0.45688280087611671,
    -0.39289177680413379,
    -0.32995546965195593,
    -0.26775708677176047,
    -0.20601007711792604,
    -0.14444779313537209,
    -0.082814965844481045,
    -0.020860224924495425,
    0.041670932838980483,
    0.10504324709228781,
    0.16953938867935797,
    0.23546883708529714,
    0.30317869287544952,
    0.37306746460076445,
    0.4456033566871388,
    0.52134941092886755,
    0.60099928708263983,
    0.68543004298262755,
    0.77578311832363567,
    0.87359436538355584,
    0.9810145229225582,
    1.10120928858589,
    1.2391520512213283,
    1.4033948436095067,
    1.6107853689035836,
    1.9032935750290445,
    2.4640403989078714,
};

}  // namespace tdcdm
