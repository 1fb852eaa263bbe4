from setuptools import setup
from setuptools import find_packages


setup(
    name='cocyclelab',
    version='0.1.0',
    description='Numerical experiments with linear cocycles: Lyapunov spectra, domination and perturbations',
    license='Apache 2.0',
    install_requires=['numpy',
                      'scipy',
                      'PyYAML',
                      'regex',
                      'unicodecsv',
                      'pudb',
                      'matplotlib'],
    extras_require={'tests': ['pytest',
                              'hypothesis']},
    scripts=['run_cocyclelab.py'],
    packages=find_packages(exclude=['tests'])
)
