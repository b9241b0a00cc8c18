// Placeholder; the acceptance suite is filled in once the core passes its
// unit tests.
#include <cstdio>
int main() {
  std::puts("acceptance suite not yet implemented");
  return 1;
}
