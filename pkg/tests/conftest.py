import os

# keep BLAS single-threaded before numpy loads: faster at these matrix sizes
# and byte-reproducible
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
