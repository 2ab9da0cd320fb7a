import os

# keep numpy's BLAS single-threaded: the arrays here are small and the
# trend experiments run faster without thread-pool overhead
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
