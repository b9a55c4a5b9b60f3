#pragma once

// The library is compiled twice: `catmouse` with 32-bit floats for experiment
// runs and `catmouse_f64` with 64-bit floats for gradient checking. Each build
// lives in its own inline namespace so both can be linked into one binary.

#ifndef CATMOUSE_USE_DOUBLE
#define CATMOUSE_USE_DOUBLE 0
#endif

#if CATMOUSE_USE_DOUBLE
#define CATMOUSE_PRECISION f64
#else
#define CATMOUSE_PRECISION f32
#endif

namespace catmouse::inline CATMOUSE_PRECISION {

#if CATMOUSE_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace catmouse::inline CATMOUSE_PRECISION
