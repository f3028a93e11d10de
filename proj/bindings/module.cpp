#include <pybind11/pybind11.h>
PYBIND11_MODULE(_maskdiff, m) { m.doc() = "placeholder"; }
