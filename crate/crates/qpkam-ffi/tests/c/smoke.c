#include <stdio.h>
#include "qpkam.h"

int main(int argc, char **argv) {
    if (argc < 2) return 2;
    QpkamConfig *cfg = NULL;
    if (qpkam_config_from_file(argv[1], &cfg) != QPKAM_STATUS_OK) {
        char msg[256];
        qpkam_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 1;
    }
    QpkamSeries *s = NULL;
    if (qpkam_kam_norms(cfg, 0, &s) != QPKAM_STATUS_OK) return 1;
    size_t n = qpkam_series_len(s);
    double prev = 0.0;
    int ok = n > 1;
    for (size_t i = 0; i < n; i++) {
        double v;
        if (qpkam_series_get(s, i, &v) != QPKAM_STATUS_OK) return 1;
        printf("%zu %.6e\n", i, v);
        if (i > 0 && !(v < prev)) ok = 0;
        prev = v;
    }
    qpkam_series_free(s);
    qpkam_config_free(cfg);
    printf("qpkam %s: %s\n", qpkam_version(), ok ? "decreasing" : "not decreasing");
    return ok ? 0 : 1;
}
