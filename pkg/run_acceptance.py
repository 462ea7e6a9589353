import asyncio
import sys

from evaluation.acceptance_evaluation import main

if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
