"""Pseudofermion GP Hyperparameter Sampler Entry Point.

This module allows running the command line as `python -m gp_pseudofermion`.

License:
MIT License (c) 2025 Shingo OKAWA
"""

from gp_pseudofermion import main


if __name__ == "__main__":
    main()
