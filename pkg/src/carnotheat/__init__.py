"""Heat-semigroup calculus and BV/perimeter functionals on step-2 Carnot groups."""

__version__ = "0.1.0"
