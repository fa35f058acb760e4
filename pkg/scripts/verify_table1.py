"""Check the published results table against the identities its columns must satisfy."""
import sys

from deepfake_music import metrics

rows = metrics.audit_published_table()
for row in rows:
    print(f"{row.source:30s} f1 gap {row.f1_gap:.5f}  recall+fnr gap {row.recall_fnr_gap:.5f}  "
          f"fpr+spec gap {row.fpr_spec_gap:.5f}  {'PASS' if row.passed else 'FAIL'}")
sys.exit(0 if all(r.passed for r in rows) else 1)
