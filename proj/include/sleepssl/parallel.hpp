#pragma once

namespace sleepssl::parallel {

enum class Mode { Serial, OpenMP };

// Global execution mode for the compute kernels. Every kernel has a serial
// reference implementation and an OpenMP one; both produce bitwise-identical
// results (each output element is reduced in a fixed serial order), so the
// mode only affects speed.
Mode mode();
void set_mode(Mode m);

int max_threads();

}  // namespace sleepssl::parallel
