import sys

from lowrank_bandits.harness import main

sys.exit(main())
