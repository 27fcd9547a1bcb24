#include "sdrs/barrier.h"

// Header-only kernels; this TU anchors the target and keeps the header
// compiling standalone.
