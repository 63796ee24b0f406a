from setuptools import setup, find_packages

setup(
    name="ais-relabel",
    version="0.1",
    packages=find_packages(exclude=['examples', 'examples.*']),
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.26',
        'pandas>=2.0.0',
        'scipy>=1.10',
        'scikit-learn>=1.2.0',
        'torch>=2.0.0',
        'pyproj>=3.5',
        'filterpy>=1.4.5',
        'matplotlib>=3.7.1',
        'pyyaml>=6.0.0',
        'jsonschema>=4.21',
        'python-json-logger>=2.0.7',
        'prometheus-client>=0.19.0',
        'tqdm>=4.65',
    ],
    entry_points={
        'console_scripts': [
            'ais-relabel=src.cli:main',
        ],
    },
)
