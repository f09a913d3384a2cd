/* Minimal C client: build a system from a config file, simulate one damping
 * time and print a summary. */
#include <stdio.h>
#include <stdlib.h>

#include "ringflow.h"

static char *slurp(const char *path) {
  FILE *f = fopen(path, "rb");
  if (!f) return NULL;
  fseek(f, 0, SEEK_END);
  long n = ftell(f);
  fseek(f, 0, SEEK_SET);
  char *buf = malloc((size_t)n + 1);
  if (buf && fread(buf, 1, (size_t)n, f) != (size_t)n) {
    free(buf);
    buf = NULL;
  }
  if (buf) buf[n] = '\0';
  fclose(f);
  return buf;
}

static int fail(RfStatus st) {
  char msg[256];
  rf_last_error_message(msg, sizeof msg);
  fprintf(stderr, "ringflow error %d: %s\n", (int)st, msg);
  return 1;
}

int main(int argc, char **argv) {
  if (argc < 2) {
    fprintf(stderr, "usage: %s config.json\n", argv[0]);
    return 2;
  }
  char *cfg = slurp(argv[1]);
  if (!cfg) return 2;

  RfSystem *sys = NULL;
  RfStatus st = rf_system_new(cfg, &sys);
  free(cfg);
  if (st != RF_STATUS_OK) return fail(st);

  double w = 0.0, t_damp = 0.0;
  rf_system_scales(sys, &w, &t_damp);
  size_t n = rf_system_particles(sys);

  RfTrajectory *traj = NULL;
  st = rf_simulate(sys, t_damp, 200, 8, &traj);
  if (st != RF_STATUS_OK) return fail(st);

  double y = 0.0, v = 0.0;
  bool exit_window = true;
  rf_trajectory_summary(traj, sys, &y, &v, &exit_window);
  printf("version %s N %zu samples %zu y/Delta %.3e window_exit %d\n", rf_version(), n,
         rf_trajectory_samples(traj), y, (int)exit_window);

  /* error path: buffer too small */
  double one;
  st = rf_system_equilibrium(sys, &one, 1);
  printf("short buffer status %d\n", (int)st);

  rf_trajectory_free(traj);
  rf_system_free(sys);
  return 0;
}
