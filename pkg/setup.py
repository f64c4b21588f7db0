# setup.py
from setuptools import setup, find_packages

# Read the version from tidb/__init__.py
def get_version():
    with open('tidb/__init__.py') as f:
        for line in f:
            if line.startswith('__version__'):
                return line.split('=')[1].strip().strip('"\'')
    return "0.3.0"  # fallback version

# Read README for long description
def get_long_description():
    try:
        with open('README.md', encoding='utf-8') as f:
            return f.read()
    except FileNotFoundError:
        return "tidb: tempo-invariant downbeat tracking with scale-invariant convolutions."

setup(
    name='tidb-tracker',
    version=get_version(),
    description='Tempo-invariant downbeat tracking: scale-invariant convolutions, bar-pointer decoding and tempo sweeps',
    long_description=get_long_description(),
    long_description_content_type='text/markdown',
    license='GPL-3.0',
    packages=find_packages(exclude=['test*', 'venv*', 'scripts*']),
    include_package_data=True,
    install_requires=[
    'python-dotenv',
    'click',
    'rich',
    'pydantic>=2',
    'demjson3',
    'numpy',
    'scipy',
    'librosa',
    'soundfile',
    'pandas',
    ],
    extras_require={
        'test': ['pytest'],
    },
    entry_points={
        'console_scripts': [
            'tidb=tidb.main_cli:cli',
        ],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'Topic :: Multimedia :: Sound/Audio :: Analysis',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Operating System :: OS Independent',
        'Environment :: Console',
    ],
    keywords='downbeat-tracking music-information-retrieval tempo scale-invariance convolution hmm viterbi',
    python_requires='>=3.10',
    zip_safe=False,
)
