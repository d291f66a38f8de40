"""curare: embedding-space dataset curation.

Takes one starter example plus a pool of unlabeled item embeddings and
produces a curated labeled subset via nearest-neighbor seeding, iterative
human-in-the-loop active learning, and diverse coreset subsampling.  Ships
with satellite-imagery preprocessing and ingestion utilities, a benchmark
harness, an HTTP labeling service, and a CLI.
"""

__version__ = "0.1.0"
